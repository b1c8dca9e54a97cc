#pragma once

#include "sdedit/errors.hpp"

#include <Eigen/Core>

#include <string>

namespace sdedit {

/// Layout of a guide: a flat d-vector, or a C×H×W image stored channel-major.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;
  bool image = false;

  static Shape vector(Eigen::Index d) { return {1, 1, static_cast<int>(d), false}; }
  static Shape image_chw(int c, int h, int w) { return {c, h, w, true}; }

  Eigen::Index size() const { return static_cast<Eigen::Index>(channels) * height * width; }
  bool operator==(const Shape&) const = default;

  std::string describe() const {
    if (!image) return "vector[" + std::to_string(size()) + "]";
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

struct Guide {
  Eigen::VectorXd data;
  Shape shape;

  Guide() = default;
  explicit Guide(Eigen::VectorXd v) : data(std::move(v)), shape(Shape::vector(data.size())) {}
  Guide(Eigen::VectorXd v, Shape s) : data(std::move(v)), shape(s) { validate(); }

  Eigen::Index size() const { return data.size(); }

  void validate() const {
    if (shape.size() != data.size()) throw ShapeError("guide data does not match its shape " + shape.describe());
    if (!data.allFinite()) throw ParameterError("guide has non-finite entries");
    if (shape.image && (data.minCoeff() < 0.0 || data.maxCoeff() > 1.0))
      throw ParameterError("image guide values must lie in [0,1]");
  }
};

/// Ω: 1 marks editable coordinates, 0 marks coordinates to preserve.
struct EditMask {
  Eigen::VectorXd omega;

  static EditMask ones(Eigen::Index d) { return {Eigen::VectorXd::Ones(d)}; }
  static EditMask zeros(Eigen::Index d) { return {Eigen::VectorXd::Zero(d)}; }

  Eigen::Index size() const { return omega.size(); }
  bool editable(Eigen::Index i) const { return omega[i] != 0.0; }

  void validate(Eigen::Index expected) const {
    if (omega.size() != expected)
      throw ShapeError("mask has " + std::to_string(omega.size()) + " entries, guide has " +
                       std::to_string(expected));
    for (Eigen::Index i = 0; i < omega.size(); ++i)
      if (omega[i] != 0.0 && omega[i] != 1.0) throw ParameterError("mask entries must be 0 or 1");
  }
};

} // namespace sdedit
