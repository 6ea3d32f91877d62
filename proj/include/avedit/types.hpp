#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace avedit {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using MatrixXf = Matrix<float>;

enum class Modality { kAudio, kVision, kText };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::kAudio: return "audio";
    case Modality::kVision: return "vision";
    case Modality::kText: return "text";
  }
  return "?";
}

// Base of every error raised by the library. The CLI maps the subclasses to
// exit codes: DataError -> 2, NumericError -> 3, anything else -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// A (channels, height, width) latent. Spatial positions are stored column-wise:
/// data(c, y * width + x).
template <typename Scalar>
struct LatentTensor {
  Matrix<Scalar> data;
  int height = 0;
  int width = 0;
  Modality modality = Modality::kVision;

  LatentTensor() = default;
  LatentTensor(Matrix<Scalar> values, int h, int w, Modality m)
      : data(std::move(values)), height(h), width(w), modality(m) {
    if (data.cols() != static_cast<Eigen::Index>(h) * w) {
      throw ShapeError("latent data has " + std::to_string(data.cols()) + " columns, expected " +
                       std::to_string(h * w));
    }
  }

  static LatentTensor zeros(int c, int h, int w, Modality m) {
    return LatentTensor(Matrix<Scalar>::Zero(c, static_cast<Eigen::Index>(h) * w), h, w, m);
  }

  int channels() const { return static_cast<int>(data.rows()); }
  bool same_shape(const LatentTensor& other) const {
    return channels() == other.channels() && height == other.height && width == other.width;
  }

  template <typename Other>
  LatentTensor<Other> cast() const {
    return LatentTensor<Other>(data.template cast<Other>(), height, width, modality);
  }
};

}  // namespace avedit
