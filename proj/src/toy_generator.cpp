#include "ris/toy_generator.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "ris/error.hpp"

namespace ris {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

std::vector<ToyLayerSpec> parse_toy_layers(std::string_view text) {
  std::vector<ToyLayerSpec> layers;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    const std::string item(text.substr(start, comma - start));
    start = comma + 1;
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      std::size_t used = 0;
      const auto res = std::stoul(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument(item);
      const auto ch = std::stoul(item.substr(colon + 1), &used);
      if (used != item.size() - colon - 1) throw std::invalid_argument(item);
      layers.push_back({res, ch});
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, "layer spec '" + item + "' must be resolution:channels");
    }
  }
  if (layers.empty()) throw Error(Errc::InvalidArgument, "empty layer spec");
  return layers;
}

std::vector<std::size_t> ToyGenerator::channels_of_region(std::size_t region) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < channel_region.size(); ++c) {
    if (channel_region[c] == region) out.push_back(c);
  }
  return out;
}

ToyGenerator make_toy(std::size_t k_regions, const std::vector<ToyLayerSpec>& layers, std::uint64_t seed,
                      std::size_t coarse_layers) {
  if (k_regions < 2) throw Error(Errc::InfeasiblePartition, "need at least 2 regions");
  if (layers.empty()) throw Error(Errc::InfeasiblePartition, "need at least one layer");
  const std::size_t coarsest = layers.front().resolution;
  if (coarsest == 0) throw Error(Errc::InfeasiblePartition, "zero resolution");

  std::size_t rows = 0;
  for (std::size_t a = 1; a * a <= k_regions; ++a) {
    if (k_regions % a == 0 && a <= coarsest && k_regions / a <= coarsest) rows = a;
  }
  if (rows == 0) {
    throw Error(Errc::InfeasiblePartition, std::to_string(k_regions) + " regions do not fit a " +
                                               std::to_string(coarsest) + "x" + std::to_string(coarsest) + " grid");
  }

  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].channels < k_regions) {
      throw Error(Errc::InfeasiblePartition, "layer " + std::to_string(l) + " has fewer channels than regions");
    }
    if (layers[l].resolution % coarsest != 0 || layers[l].resolution < coarsest) {
      throw Error(Errc::InfeasiblePartition, "resolution " + std::to_string(layers[l].resolution) +
                                                 " does not refine " + std::to_string(coarsest));
    }
    specs.push_back({"L" + std::to_string(l), layers[l].channels, layers[l].resolution, 0});
  }

  ToyGenerator gen;
  gen.layout = LayerLayout::from_sizes(specs, std::min(coarse_layers, specs.size()));
  gen.regions = k_regions;
  gen.region_rows = rows;
  gen.region_cols = k_regions / rows;
  gen.seed = seed;

  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t res = layers[l].resolution;
    std::vector<std::uint32_t> map(res * res);
    for (std::size_t h = 0; h < res; ++h) {
      for (std::size_t w = 0; w < res; ++w) {
        const std::size_t ch = h * coarsest / res;
        const std::size_t cw = w * coarsest / res;
        map[h * res + w] =
            static_cast<std::uint32_t>((ch * gen.region_rows / coarsest) * gen.region_cols + cw * gen.region_cols / coarsest);
      }
    }
    Tensor basis({layers[l].channels, res, res});
    for (std::size_t c = 0; c < layers[l].channels; ++c) {
      const auto owner = static_cast<std::uint32_t>(c % k_regions);
      gen.channel_region.push_back(owner);
      for (std::size_t i = 0; i < res * res; ++i) {
        const double v = 0.5 + uniform01(rng);
        basis.data[c * res * res + i] = map[i] == owner ? static_cast<float>(v) : 0.0f;
      }
    }
    gen.region_map.push_back(std::move(map));
    gen.basis.push_back(std::move(basis));
  }
  return gen;
}

ActivationStack synthesize(const ToyGenerator& gen, const StyleVector& sigma) {
  if (sigma.values.size() != gen.layout.total_channels()) {
    throw Error(Errc::LengthMismatch, "style length " + std::to_string(sigma.values.size()) + ", generator has " +
                                          std::to_string(gen.layout.total_channels()));
  }
  ActivationStack stack;
  stack.image_id = sigma.image_id;
  for (std::size_t l = 0; l < gen.layout.layer_count(); ++l) {
    const LayerSpec& spec = gen.layout.layers()[l];
    const std::size_t plane = spec.resolution * spec.resolution;
    Tensor a(gen.basis[l].shape);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const float s = sigma.values[spec.style_offset + c];
      for (std::size_t i = 0; i < plane; ++i) a.data[c * plane + i] = s * gen.basis[l].data[c * plane + i];
    }
    stack.layers.emplace(spec.name, make_view(std::move(a)));
  }
  return stack;
}

std::vector<GroupSpec> planted_groups(std::size_t images, std::size_t regions, std::size_t group_size,
                                      std::uint64_t seed) {
  if (group_size < 1) throw Error(Errc::BadGroupSpec, "group size must be at least 1");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<GroupSpec> groups;
  for (std::size_t r = 0; r < regions; ++r) {
    std::vector<std::size_t> order(images);
    for (std::size_t i = 0; i < images; ++i) order[i] = i;
    for (std::size_t i = images; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    for (std::size_t start = 0; start < images; start += group_size) {
      GroupSpec g;
      g.regions = {r};
      g.members.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(images, start + group_size)));
      std::ranges::sort(g.members);
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

std::vector<GroupSpec> parse_group_spec(const nlohmann::json& j, std::size_t images, std::size_t regions,
                                        std::uint64_t seed) {
  try {
    if (j.contains("planted")) {
      return planted_groups(images, regions, j["planted"].at("group_size").get<std::size_t>(), seed);
    }
    std::vector<GroupSpec> groups;
    for (const auto& g : j.at("groups")) {
      groups.push_back({g.at("members").get<std::vector<std::size_t>>(), g.at("regions").get<std::vector<std::size_t>>()});
    }
    return groups;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadGroupSpec, std::string("malformed group spec: ") + e.what());
  }
}

std::string fixture_image_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%04zu", i);
  return buf;
}

Bundle make_fixture(const ToyGenerator& gen, std::size_t images, const std::vector<GroupSpec>& groups,
                    std::uint64_t seed) {
  // group id per (region, image); -1 when the image is not in a group for that region
  std::vector<std::vector<long>> region_group(gen.regions, std::vector<long>(images, -1));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].members.empty() || groups[g].regions.empty()) {
      throw Error(Errc::BadGroupSpec, "group " + std::to_string(g) + " needs members and regions");
    }
    for (std::size_t r : groups[g].regions) {
      if (r >= gen.regions) throw Error(Errc::BadGroupSpec, "group " + std::to_string(g) + " names region " + std::to_string(r));
      for (std::size_t m : groups[g].members) {
        if (m >= images) throw Error(Errc::BadGroupSpec, "group " + std::to_string(g) + " names image " + std::to_string(m));
        if (region_group[r][m] != -1) {
          throw Error(Errc::BadGroupSpec, "image " + std::to_string(m) + " is in two groups for region " + std::to_string(r));
        }
        region_group[r][m] = static_cast<long>(g);
      }
    }
  }

  const std::size_t channels = gen.layout.total_channels();
  std::mt19937_64 rng(seed);
  auto draw = [&] { return static_cast<float>(0.25 + 1.75 * uniform01(rng)); };
  std::vector<StyleVector> styles(images);
  for (std::size_t i = 0; i < images; ++i) {
    styles[i].image_id = fixture_image_id(i);
    styles[i].values.resize(channels);
    for (auto& v : styles[i].values) v = draw();
  }
  for (const auto& g : groups) {
    for (std::size_t r : g.regions) {
      for (std::size_t c : gen.channels_of_region(r)) {
        const float shared = draw();
        for (std::size_t m : g.members) styles[m].values[c] = shared;
      }
    }
  }

  Bundle bundle(gen.layout);
  for (const auto& s : styles) {
    bundle.add_image(s.image_id);
    write_style(bundle, s);
    write_activations(bundle, synthesize(gen, s));
  }

  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : gen.layout.layers()) layers.push_back({{"resolution", l.resolution}, {"channels", l.channels}});
  nlohmann::json group_json = nlohmann::json::array();
  for (const auto& g : groups) group_json.push_back({{"members", g.members}, {"regions", g.regions}});
  bundle.metadata()["fixture"] = {{"regions", gen.regions},
                                  {"region_grid", {gen.region_rows, gen.region_cols}},
                                  {"generator_seed", gen.seed},
                                  {"seed", seed},
                                  {"layers", layers},
                                  {"channel_region", gen.channel_region},
                                  {"groups", group_json},
                                  {"region_groups", region_group}};
  return bundle;
}

}  // namespace ris
