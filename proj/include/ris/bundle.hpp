#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ris/layout.hpp"
#include "ris/tensor.hpp"

namespace ris {

/// One image's concatenated per-layer style coefficients.
struct StyleVector {
  std::string image_id;
  std::vector<float> values;
};

/// One image's per-layer activation tensors, each C_l x H_l x W_l.
struct ActivationStack {
  std::string image_id;
  std::map<std::string, TensorView, std::less<>> layers;

  const TensorView& layer(std::string_view name) const;
};

TensorView make_view(Tensor tensor);

/// Manifest plus f32 blobs. Loaded bundles reference their blob files and map
/// them on access; tensors added with put() live in memory until saved.
class Bundle {
 public:
  static constexpr int kVersion = 1;

  Bundle() = default;
  explicit Bundle(LayerLayout layout, std::vector<std::string> images = {});

  const LayerLayout& layout() const { return layout_; }
  void set_layout(LayerLayout layout) { layout_ = std::move(layout); }

  const std::vector<std::string>& images() const { return images_; }
  void set_images(std::vector<std::string> images) { images_ = std::move(images); }
  void add_image(std::string id) { images_.push_back(std::move(id)); }
  std::optional<std::size_t> image_index(std::string_view id) const;

  void put(std::string name, Tensor tensor);
  /// Shares `data` without copying; the caller must not mutate it afterwards.
  void put_shared(std::string name, Shape shape, std::shared_ptr<const std::vector<float>> data);
  bool contains(std::string_view name) const;
  const Shape& shape_of(std::string_view name) const;
  /// Throws InvalidBundle for unknown names, IoFailure if the blob cannot be mapped.
  TensorView get(std::string_view name) const;
  std::vector<std::string> tensor_names() const;

  /// Extra top-level manifest sections ("fixture", "cluster_model", ...).
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  const std::filesystem::path& source_dir() const { return dir_; }

 private:
  friend Bundle load_bundle(const std::filesystem::path& path);

  struct Entry {
    Shape shape;
    std::filesystem::path file;                       // set for loaded tensors
    std::shared_ptr<const std::vector<float>> memory;  // set for put() tensors
  };

  LayerLayout layout_;
  std::vector<std::string> images_;
  std::map<std::string, Entry, std::less<>> tensors_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::filesystem::path dir_;
};

Bundle load_bundle(const std::filesystem::path& path);
void save_bundle(const Bundle& bundle, const std::filesystem::path& path);

/// Canonical manifest text for a bundle, as written by save_bundle.
std::string manifest_text(const Bundle& bundle);

// Tensor naming convention shared with the exporter.
std::string style_tensor_name(std::string_view image_id);
std::string activation_tensor_name(std::string_view image_id, std::string_view layer);
std::string membership_tensor_name(std::string_view image_id);
std::string contribution_tensor_name(std::string_view image_id);
std::string embedding_tensor_name(std::string_view feature);

StyleVector read_style(const Bundle& bundle, std::string_view image_id);
/// Throws MissingActivations when any layout layer is absent for the image.
ActivationStack read_activations(const Bundle& bundle, std::string_view image_id);
void write_style(Bundle& bundle, const StyleVector& style);
void write_activations(Bundle& bundle, const ActivationStack& stack);

/// Contiguous span of `layer` inside `style`. Throws UnknownLayer.
std::span<const float> slice_layer(const StyleVector& style, const LayerLayout& layout,
                                   std::string_view layer);

/// Checks that `stack` has a C_l x R_l x R_l tensor for every layer. Throws ShapeMismatch.
void check_activation_shapes(const ActivationStack& stack, const LayerLayout& layout);

nlohmann::json layout_to_json(const LayerLayout& layout);
LayerLayout layout_from_json(const nlohmann::json& j);

}  // namespace ris
