#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ris {

struct LayerSpec {
  std::string name;
  std::size_t channels = 0;
  std::size_t resolution = 0;
  std::size_t style_offset = 0;

  bool operator==(const LayerSpec&) const = default;
};

/// Half-open channel interval [begin, end) inside a style vector.
struct ChannelRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t c) const { return c >= begin && c < end; }
  bool operator==(const ChannelRange&) const = default;
};

/// Correspondence between generator layers and spans of the concatenated
/// style vector. Layer spans partition [0, total_channels) in order.
class LayerLayout {
 public:
  static constexpr std::size_t kDefaultCoarseLayers = 4;

  LayerLayout() = default;

  /// Throws NonContiguousLayout when offsets leave gaps or overlap, and
  /// InvalidBundle for non-monotone resolutions or a bad coarse count.
  explicit LayerLayout(std::vector<LayerSpec> layers,
                       std::size_t coarse_layers = kDefaultCoarseLayers);

  /// Builds a layout from (name, channels, resolution) triples, deriving offsets.
  static LayerLayout from_sizes(const std::vector<LayerSpec>& layers,
                                std::size_t coarse_layers = kDefaultCoarseLayers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t total_channels() const { return total_channels_; }
  std::size_t coarse_layer_count() const { return coarse_layers_; }

  ChannelRange coarse_range() const;
  ChannelRange channel_range(std::size_t layer_index) const;

  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws UnknownLayer.
  const LayerSpec& layer(std::string_view name) const;
  std::size_t layer_index(std::string_view name) const;

  /// Layer that owns style channel `c`.
  std::size_t layer_of_channel(std::size_t c) const;

  bool operator==(const LayerLayout&) const = default;

 private:
  std::vector<LayerSpec> layers_;
  std::size_t coarse_layers_ = 0;
  std::size_t total_channels_ = 0;
};

}  // namespace ris
