#include "rsdh/tensor.hpp"

namespace rsdh {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

DimensionError::DimensionError(const std::string& op, int axis, const std::string& detail)
    : std::invalid_argument(op + ": " + (axis >= 0 ? "axis " + std::to_string(axis) + ": " : std::string{}) + detail),
      axis_(axis) {}

void require_shape(const std::string& op, const Shape& actual, const Shape& expected) {
  if (actual.size() != expected.size()) {
    throw DimensionError(op, -1,
                         "expected rank " + std::to_string(expected.size()) + " " + shape_to_string(expected) +
                             ", got " + shape_to_string(actual));
  }
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] != expected[i]) {
      throw DimensionError(op, static_cast<int>(i),
                           "expected " + std::to_string(expected[i]) + ", got " + std::to_string(actual[i]) + " (shape " +
                               shape_to_string(actual) + ")");
    }
  }
}

}  // namespace rsdh
