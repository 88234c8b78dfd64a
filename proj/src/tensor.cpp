#include "ris/tensor.hpp"

#include "ris/error.hpp"

namespace ris {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != element_count(shape)) {
    throw Error(Errc::ShapeMismatch, "tensor of shape " + shape_string(shape) + " given " +
                                         std::to_string(data.size()) + " values");
  }
}

}  // namespace ris
