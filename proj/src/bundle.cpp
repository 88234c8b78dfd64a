#include "ris/bundle.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ris/error.hpp"

namespace ris {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kDtype = "f32le";
constexpr const char* kOrder = "row-major";

class MappedBlob {
 public:
  MappedBlob(const fs::path& file, std::size_t bytes) : bytes_(bytes) {
    if (bytes_ == 0) return;
    int fd = ::open(file.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) throw Error(Errc::IoFailure, "cannot open " + file.string());
    void* addr = ::mmap(nullptr, bytes_, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (addr == MAP_FAILED) throw Error(Errc::IoFailure, "cannot map " + file.string());
    addr_ = addr;
  }
  MappedBlob(const MappedBlob&) = delete;
  MappedBlob& operator=(const MappedBlob&) = delete;
  ~MappedBlob() {
    if (addr_) ::munmap(addr_, bytes_);
  }

  const float* data() const { return static_cast<const float*>(addr_); }

 private:
  void* addr_ = nullptr;
  std::size_t bytes_ = 0;
};

bool reserved_key(std::string_view key) {
  return key == "version" || key == "dtype" || key == "order" || key == "images" || key == "layout" ||
         key == "tensors";
}

void write_file_atomically(const fs::path& target, const char* bytes, std::size_t size) {
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot write " + tmp.string());
    if (size) out.write(bytes, static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw Error(Errc::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string blob_file_name(std::size_t ordinal) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%06zu.f32", ordinal);
  return buf;
}

}  // namespace

const TensorView& ActivationStack::layer(std::string_view name) const {
  auto it = layers.find(name);
  if (it == layers.end()) {
    throw Error(Errc::MissingActivations, "image '" + image_id + "' has no activations for layer '" +
                                              std::string(name) + "'");
  }
  return it->second;
}

TensorView make_view(Tensor tensor) {
  auto owned = std::make_shared<const std::vector<float>>(std::move(tensor.data));
  std::span<const float> span(owned->data(), owned->size());
  return TensorView(std::move(tensor.shape), span, std::move(owned));
}

Bundle::Bundle(LayerLayout layout, std::vector<std::string> images)
    : layout_(std::move(layout)), images_(std::move(images)) {}

std::optional<std::size_t> Bundle::image_index(std::string_view id) const {
  for (std::size_t i = 0; i < images_.size(); ++i) {
    if (images_[i] == id) return i;
  }
  return std::nullopt;
}

void Bundle::put(std::string name, Tensor tensor) {
  if (tensor.data.size() != element_count(tensor.shape)) {
    throw Error(Errc::ShapeMismatch, name);
  }
  Entry e;
  e.shape = std::move(tensor.shape);
  e.memory = std::make_shared<const std::vector<float>>(std::move(tensor.data));
  tensors_[std::move(name)] = std::move(e);
}

void Bundle::put_shared(std::string name, Shape shape, std::shared_ptr<const std::vector<float>> data) {
  if (!data || data->size() != element_count(shape)) throw Error(Errc::ShapeMismatch, name);
  Entry e;
  e.shape = std::move(shape);
  e.memory = std::move(data);
  tensors_[std::move(name)] = std::move(e);
}

bool Bundle::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

const Shape& Bundle::shape_of(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(Errc::InvalidBundle, "no tensor '" + std::string(name) + "'");
  return it->second.shape;
}

TensorView Bundle::get(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(Errc::InvalidBundle, "no tensor '" + std::string(name) + "'");
  const Entry& e = it->second;
  if (e.memory) {
    return TensorView(e.shape, std::span<const float>(e.memory->data(), e.memory->size()), e.memory);
  }
  const std::size_t n = element_count(e.shape);
  auto blob = std::make_shared<const MappedBlob>(e.file, n * sizeof(float));
  return TensorView(e.shape, std::span<const float>(blob->data(), n), blob);
}

std::vector<std::string> Bundle::tensor_names() const {
  std::vector<std::string> names;
  names.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) names.push_back(name);
  return names;
}

json layout_to_json(const LayerLayout& layout) {
  json layers = json::array();
  for (const auto& l : layout.layers()) {
    layers.push_back({{"name", l.name},
                      {"channels", l.channels},
                      {"resolution", l.resolution},
                      {"style_offset", l.style_offset}});
  }
  return {{"coarse_layers", layout.coarse_layer_count()}, {"layers", std::move(layers)}};
}

LayerLayout layout_from_json(const json& j) {
  try {
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) {
      layers.push_back({l.at("name").get<std::string>(), l.at("channels").get<std::size_t>(),
                        l.at("resolution").get<std::size_t>(), l.at("style_offset").get<std::size_t>()});
    }
    std::size_t coarse = j.value("coarse_layers", LayerLayout::kDefaultCoarseLayers);
    return LayerLayout(std::move(layers), coarse);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidBundle, std::string("malformed layout: ") + e.what());
  }
}

namespace {

json manifest_json(const Bundle& bundle) {
  json tensors = json::array();
  std::size_t ordinal = 0;
  for (const auto& name : bundle.tensor_names()) {
    tensors.push_back({{"name", name}, {"shape", bundle.shape_of(name)}, {"file", blob_file_name(ordinal++)}});
  }
  json m = bundle.metadata().is_object() ? bundle.metadata() : json::object();
  m["version"] = Bundle::kVersion;
  m["dtype"] = kDtype;
  m["order"] = kOrder;
  m["images"] = bundle.images();
  m["layout"] = layout_to_json(bundle.layout());
  m["tensors"] = std::move(tensors);
  return m;
}

}  // namespace

std::string manifest_text(const Bundle& bundle) { return manifest_json(bundle).dump(2) + "\n"; }

void save_bundle(const Bundle& bundle, const fs::path& path) {
  for (const auto& [key, _] : bundle.metadata().items()) {
    if (reserved_key(key)) throw Error(Errc::InvalidBundle, "metadata key '" + key + "' is reserved");
  }
  std::vector<std::string> seen = bundle.images();
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
    throw Error(Errc::InvalidBundle, "duplicate image ids");
  }

  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec || !fs::is_directory(path)) {
    throw Error(Errc::IoFailure, "cannot create bundle directory " + path.string() +
                                     (ec ? ": " + ec.message() : std::string()));
  }

  const json manifest = manifest_json(bundle);
  for (const auto& record : manifest.at("tensors")) {
    const TensorView view = bundle.get(record.at("name").get<std::string>());
    write_file_atomically(path / record.at("file").get<std::string>(),
                          reinterpret_cast<const char*>(view.data().data()), view.size() * sizeof(float));
  }
  const std::string text = manifest.dump(2) + "\n";
  write_file_atomically(path / kManifestName, text.data(), text.size());
}

Bundle load_bundle(const fs::path& path) {
  const fs::path manifest_path = path / kManifestName;
  if (!fs::is_regular_file(manifest_path)) {
    throw Error(Errc::MissingManifest, manifest_path.string());
  }
  json m;
  {
    std::ifstream in(manifest_path);
    if (!in) throw Error(Errc::IoFailure, "cannot read " + manifest_path.string());
    try {
      in >> m;
    } catch (const json::exception& e) {
      throw Error(Errc::InvalidBundle, std::string("manifest does not parse: ") + e.what());
    }
  }
  if (!m.is_object()) throw Error(Errc::InvalidBundle, "manifest is not an object");
  if (!m.contains("version") || !m["version"].is_number_integer()) {
    throw Error(Errc::InvalidBundle, "manifest has no integer version");
  }
  if (m["version"].get<int>() != Bundle::kVersion) {
    throw Error(Errc::UnsupportedVersion, "manifest version " + m["version"].dump());
  }
  if (m.value("dtype", "") != kDtype) throw Error(Errc::InvalidBundle, "dtype must be f32le");
  if (m.value("order", "") != kOrder) throw Error(Errc::InvalidBundle, "order must be row-major");

  Bundle bundle;
  bundle.dir_ = path;
  bundle.layout_ = layout_from_json(m.at("layout"));
  try {
    bundle.images_ = m.at("images").get<std::vector<std::string>>();
    for (const auto& record : m.at("tensors")) {
      Bundle::Entry e;
      auto name = record.at("name").get<std::string>();
      e.shape = record.at("shape").get<Shape>();
      const auto file = record.at("file").get<std::string>();
      if (file.empty() || fs::path(file).is_absolute() || file.find("..") != std::string::npos) {
        throw Error(Errc::InvalidBundle, "tensor '" + name + "' has an unsafe file name");
      }
      e.file = path / file;
      std::error_code ec;
      const auto bytes = fs::file_size(e.file, ec);
      if (ec) throw Error(Errc::InvalidBundle, "tensor '" + name + "' blob missing: " + e.file.string());
      if (bytes != element_count(e.shape) * sizeof(float)) {
        throw Error(Errc::ShapeMismatch, name + ": blob has " + std::to_string(bytes) + " bytes, shape " +
                                             shape_string(e.shape) + " needs " +
                                             std::to_string(element_count(e.shape) * sizeof(float)));
      }
      if (!bundle.tensors_.emplace(name, std::move(e)).second) {
        throw Error(Errc::InvalidBundle, "duplicate tensor '" + name + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidBundle, std::string("malformed manifest: ") + e.what());
  }
  for (auto& [key, value] : m.items()) {
    if (!reserved_key(key)) bundle.metadata_[key] = value;
  }
  return bundle;
}

std::string style_tensor_name(std::string_view image_id) { return "style/" + std::string(image_id); }

std::string activation_tensor_name(std::string_view image_id, std::string_view layer) {
  return "act/" + std::string(image_id) + "/" + std::string(layer);
}

std::string membership_tensor_name(std::string_view image_id) { return "membership/" + std::string(image_id); }

std::string contribution_tensor_name(std::string_view image_id) { return "contrib/" + std::string(image_id); }

std::string embedding_tensor_name(std::string_view feature) { return "emb/" + std::string(feature); }

StyleVector read_style(const Bundle& bundle, std::string_view image_id) {
  const auto name = style_tensor_name(image_id);
  if (!bundle.contains(name)) throw Error(Errc::InvalidBundle, "no style vector for '" + std::string(image_id) + "'");
  const TensorView view = bundle.get(name);
  if (view.size() != bundle.layout().total_channels()) {
    throw Error(Errc::ShapeMismatch, name + " has " + std::to_string(view.size()) + " values, layout has " +
                                         std::to_string(bundle.layout().total_channels()) + " channels");
  }
  StyleVector s{std::string(image_id), {view.data().begin(), view.data().end()}};
  for (float v : s.values) {
    if (!std::isfinite(v)) throw Error(Errc::InvalidBundle, name + " has non-finite values");
  }
  return s;
}

ActivationStack read_activations(const Bundle& bundle, std::string_view image_id) {
  ActivationStack stack;
  stack.image_id = std::string(image_id);
  for (const auto& l : bundle.layout().layers()) {
    const auto name = activation_tensor_name(image_id, l.name);
    if (!bundle.contains(name)) {
      throw Error(Errc::MissingActivations, "image '" + std::string(image_id) + "' lacks layer '" + l.name + "'");
    }
    stack.layers.emplace(l.name, bundle.get(name));
  }
  check_activation_shapes(stack, bundle.layout());
  return stack;
}

void write_style(Bundle& bundle, const StyleVector& style) {
  if (style.values.size() != bundle.layout().total_channels()) {
    throw Error(Errc::LengthMismatch, "style '" + style.image_id + "' length " + std::to_string(style.values.size()));
  }
  bundle.put(style_tensor_name(style.image_id), Tensor({style.values.size()}, style.values));
}

void write_activations(Bundle& bundle, const ActivationStack& stack) {
  check_activation_shapes(stack, bundle.layout());
  for (const auto& [layer, view] : stack.layers) {
    bundle.put(activation_tensor_name(stack.image_id, layer), view.to_tensor());
  }
}

std::span<const float> slice_layer(const StyleVector& style, const LayerLayout& layout, std::string_view layer) {
  const LayerSpec& l = layout.layer(layer);
  if (style.values.size() != layout.total_channels()) {
    throw Error(Errc::LengthMismatch, "style length " + std::to_string(style.values.size()));
  }
  return std::span<const float>(style.values).subspan(l.style_offset, l.channels);
}

void check_activation_shapes(const ActivationStack& stack, const LayerLayout& layout) {
  for (const auto& l : layout.layers()) {
    const TensorView& t = stack.layer(l.name);
    const Shape expected{l.channels, l.resolution, l.resolution};
    if (t.shape() != expected) {
      throw Error(Errc::ShapeMismatch, "activation '" + stack.image_id + "/" + l.name + "' has shape " +
                                           shape_string(t.shape()) + ", expected " + shape_string(expected));
    }
  }
}

}  // namespace ris
