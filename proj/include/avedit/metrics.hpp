#pragma once

#include "avedit/embedders.hpp"

#include "json.hpp"

#include <Eigen/Eigenvalues>

#include <optional>
#include <string>
#include <vector>

namespace avedit {

enum class SetSource { kReference, kGenerated };

const char* to_string(SetSource s);

/// n x d embeddings that all came from one embedder.
struct EmbeddingSet {
  MatrixXd vectors;
  SetSource source = SetSource::kReference;
  std::string embedder;

  static EmbeddingSet from(const std::vector<FeatureVector>& features, SetSource source);

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
  void validate() const;
};

template <typename S>
struct GaussianStats {
  Vector<S> mean;
  Matrix<S> covariance;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Sample mean and unbiased covariance, symmetrized, plus jitter * I.
GaussianStats<double> fit_gaussian(const EmbeddingSet& set, double jitter = 1e-6);

/// Square root of a symmetric PSD matrix through its eigendecomposition;
/// negative eigenvalues are clamped to zero.
template <typename S>
Matrix<S> sqrt_psd(const Matrix<S>& a) {
  Eigen::SelfAdjointEigenSolver<Matrix<S>> es(a);
  if (es.info() != Eigen::Success) throw NumericError("sqrt_psd: eigendecomposition failed");
  const Vector<S> root = es.eigenvalues().cwiseMax(S(0)).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Throws unless `c` is symmetric within 1e-8 and has no eigenvalue below
/// -1e-8 (relative to its largest magnitude when that exceeds one).
template <typename S>
void check_covariance(const Matrix<S>& c, const char* what) {
  if (c.rows() != c.cols()) throw ShapeError(std::string(what) + ": covariance is not square");
  if (!c.allFinite()) throw NumericError(std::string(what) + ": non-finite covariance");
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > S(1e-8)) throw NumericError(std::string(what) + ": covariance not symmetric");
  const Vector<S> ev = Eigen::SelfAdjointEigenSolver<Matrix<S>>(c, Eigen::EigenvaluesOnly).eigenvalues();
  const S scale = std::max(S(1), ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < S(-1e-8) * scale) {
    throw NumericError(std::string(what) + ": covariance not PSD (eigenvalue " + std::to_string(double(ev.minCoeff())) + ")");
  }
}

/// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
template <typename S>
S frechet_distance(const GaussianStats<S>& a, const GaussianStats<S>& b) {
  if (a.dim() != b.dim() || a.covariance.rows() != a.dim() || b.covariance.rows() != b.dim()) {
    throw ShapeError("frechet_distance: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()) + ")");
  }
  check_covariance(a.covariance, "frechet_distance");
  check_covariance(b.covariance, "frechet_distance");
  if (a.mean == b.mean && a.covariance == b.covariance) return S(0);
  const Matrix<S> ra = sqrt_psd<S>(a.covariance);
  Matrix<S> inner = ra * b.covariance * ra;
  inner = S(0.5) * (inner + inner.transpose());
  const S cross = sqrt_psd<S>(inner).trace();
  const S d = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - S(2) * cross;
  return std::max(d, S(0));
}

template <typename S>
S cosine(const RowVector<S>& a, const RowVector<S>& b) {
  const S na = a.norm(), nb = b.norm();
  if (na == S(0) || nb == S(0)) throw NumericError("cosine: zero vector");
  return std::clamp(a.dot(b) / (na * nb), S(-1), S(1));
}

/// Mean cosine over all reference x generated pairs.
double pairwise_cosine(const EmbeddingSet& ref, const EmbeddingSet& gen);

/// Mean cosine between each generated vector and one prompt embedding.
double text_alignment(const EmbeddingSet& gen, const RowVector<double>& prompt);
/// Row k of `gen` against row k of `prompts`.
double text_alignment(const EmbeddingSet& gen, const EmbeddingSet& prompts);

/// Mean cosine of corresponding audio/image rows in the joint space.
double avss(const EmbeddingSet& audio, const EmbeddingSet& image);

/// Audio-visual media plus the prompt each item was made from.
struct MediaSet {
  std::vector<std::vector<double>> audio;
  std::vector<Planes> images;
  std::vector<std::string> prompts;

  int size() const { return static_cast<int>(audio.size()); }
  void validate(const char* what) const;
};

/// Unavailable entries (FAD below two items per set) serialize as null.
struct MetricReport {
  std::optional<double> clip_i, dino, clap_a, fad, clip_t, clap_t, avss;
  int n_reference = 0;
  int n_generated = 0;
  std::uint64_t embedder_seed = 0;

  nlohmann::json to_json() const;
};

MetricReport evaluate(const MediaSet& reference, const MediaSet& generated, const Embedders& emb);

}  // namespace avedit
