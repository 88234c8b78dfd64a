#include "ris/layout.hpp"

#include <algorithm>

#include "ris/error.hpp"

namespace ris {

LayerLayout::LayerLayout(std::vector<LayerSpec> layers, std::size_t coarse_layers)
    : layers_(std::move(layers)), coarse_layers_(coarse_layers) {
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.name.empty()) throw Error(Errc::InvalidBundle, "layer " + std::to_string(i) + " has no name");
    if (l.channels == 0) throw Error(Errc::InvalidBundle, "layer '" + l.name + "' has zero channels");
    if (l.resolution == 0) throw Error(Errc::InvalidBundle, "layer '" + l.name + "' has zero resolution");
    if (l.style_offset != expected_offset) {
      throw Error(Errc::NonContiguousLayout, "layer '" + l.name + "' starts at " +
                                                 std::to_string(l.style_offset) + ", expected " +
                                                 std::to_string(expected_offset));
    }
    if (i > 0 && l.resolution < layers_[i - 1].resolution) {
      throw Error(Errc::InvalidBundle, "layer resolutions decrease at '" + l.name + "'");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (layers_[j].name == l.name) throw Error(Errc::InvalidBundle, "duplicate layer '" + l.name + "'");
    }
    expected_offset += l.channels;
  }
  total_channels_ = expected_offset;
  if (coarse_layers_ > layers_.size()) {
    throw Error(Errc::InvalidBundle, "coarse layer count " + std::to_string(coarse_layers_) +
                                         " exceeds layer count " + std::to_string(layers_.size()));
  }
}

LayerLayout LayerLayout::from_sizes(const std::vector<LayerSpec>& layers, std::size_t coarse_layers) {
  std::vector<LayerSpec> with_offsets = layers;
  std::size_t offset = 0;
  for (auto& l : with_offsets) {
    l.style_offset = offset;
    offset += l.channels;
  }
  return LayerLayout(std::move(with_offsets), coarse_layers);
}

ChannelRange LayerLayout::coarse_range() const {
  if (coarse_layers_ == 0) return {0, 0};
  return {0, channel_range(coarse_layers_ - 1).end};
}

ChannelRange LayerLayout::channel_range(std::size_t layer_index) const {
  const auto& l = layers_.at(layer_index);
  return {l.style_offset, l.style_offset + l.channels};
}

std::optional<std::size_t> LayerLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  return std::nullopt;
}

const LayerSpec& LayerLayout::layer(std::string_view name) const { return layers_[layer_index(name)]; }

std::size_t LayerLayout::layer_index(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw Error(Errc::UnknownLayer, "no layer named '" + std::string(name) + "'");
  return *idx;
}

std::size_t LayerLayout::layer_of_channel(std::size_t c) const {
  auto it = std::upper_bound(layers_.begin(), layers_.end(), c,
                             [](std::size_t v, const LayerSpec& l) { return v < l.style_offset; });
  if (c >= total_channels_ || it == layers_.begin()) {
    throw Error(Errc::InvalidArgument, "channel " + std::to_string(c) + " outside layout");
  }
  return static_cast<std::size_t>(std::distance(layers_.begin(), it)) - 1;
}

}  // namespace ris
