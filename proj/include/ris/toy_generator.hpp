#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ris/bundle.hpp"
#include "ris/layout.hpp"
#include "ris/tensor.hpp"

namespace ris {

struct ToyLayerSpec {
  std::size_t resolution = 0;
  std::size_t channels = 0;
};

/// Parses "4:8,8:8,16:8" (resolution:channels per layer).
std::vector<ToyLayerSpec> parse_toy_layers(std::string_view text);

/// Miniature modulated generator whose channels only ever touch their own
/// spatial region, so every attribution and transfer has an exact answer.
struct ToyGenerator {
  LayerLayout layout;
  std::size_t regions = 0;
  std::size_t region_rows = 0;  // band grid on the coarsest layer
  std::size_t region_cols = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::uint32_t>> region_map;  // per layer, R_l x R_l
  std::vector<std::uint32_t> channel_region;           // per style channel
  std::vector<Tensor> basis;                           // per layer, C_l x R_l x R_l

  std::uint32_t region_at(std::size_t layer, std::size_t h, std::size_t w) const {
    const std::size_t r = layout.layers()[layer].resolution;
    return region_map[layer][h * r + w];
  }
  std::vector<std::size_t> channels_of_region(std::size_t region) const;
};

/// Regions are an a x b grid of bands on the coarsest layer (a * b = k, a and b
/// as close as possible) refined consistently into every finer layer. Basis
/// entries are drawn from [0.5, 1.5) on-region and are exactly 0 elsewhere.
/// Throws InfeasiblePartition.
ToyGenerator make_toy(std::size_t k_regions, const std::vector<ToyLayerSpec>& layers, std::uint64_t seed,
                      std::size_t coarse_layers = 1);

/// A_l[c,h,w] = sigma_l[c] * B_l[c,h,w]. Throws LengthMismatch.
ActivationStack synthesize(const ToyGenerator& gen, const StyleVector& sigma);

/// Images in `members` share identical style values on the channels of `regions`.
struct GroupSpec {
  std::vector<std::size_t> members;
  std::vector<std::size_t> regions;
};

/// For every region, an independent seeded partition of the images into
/// groups of `group_size`.
std::vector<GroupSpec> planted_groups(std::size_t images, std::size_t regions, std::size_t group_size,
                                      std::uint64_t seed);

/// Accepts {"groups": [{"members": [...], "regions": [...]}]} or
/// {"planted": {"group_size": 4}}. Throws BadGroupSpec.
std::vector<GroupSpec> parse_group_spec(const nlohmann::json& j, std::size_t images, std::size_t regions,
                                        std::uint64_t seed);

std::string fixture_image_id(std::size_t i);

/// Bundle of styles and activations for `images` toy images, with ground truth
/// under the "fixture" manifest section. Styles are drawn from [0.25, 2.0).
/// Throws BadGroupSpec.
Bundle make_fixture(const ToyGenerator& gen, std::size_t images, const std::vector<GroupSpec>& groups,
                    std::uint64_t seed);

}  // namespace ris
