#pragma once

// Parameter checkpoints: a JSON manifest mapping tensor name to shape, dtype
// and byte offset, plus one little-endian blob of float32 values.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "coronagan/networks.hpp"

namespace coronagan::io {

struct NamedTensor {
  std::string name;
  const Tensor<float>* tensor;
};

/// Writes `<stem>.json` and `<stem>.bin` in `dir`. `extra` is merged into the
/// manifest under "meta".
void write_tensors(const std::filesystem::path& dir, const std::string& stem,
                   const std::vector<NamedTensor>& tensors, const std::string& extra_json = "{}");

struct TensorFile {
  std::map<std::string, Tensor<float>> tensors;
  std::string meta_json;  // the "meta" object, serialized
};

[[nodiscard]] TensorFile read_tensors(const std::filesystem::path& dir, const std::string& stem);

/// Model checkpoint with the network config recorded in the manifest.
void save_model(const net::CoronaryGan<float>& model, const std::filesystem::path& dir);

/// Rebuilds the model from the recorded config and loads every tensor,
/// validating each shape. Missing or extra tensors are errors.
[[nodiscard]] net::CoronaryGan<float> load_model(const std::filesystem::path& dir);

/// Loads parameters into an already constructed model (shapes validated).
void load_params_into(const TensorFile& file, net::CoronaryGan<float>& model);

std::string network_config_json(const net::NetworkConfig& cfg);
net::NetworkConfig network_config_from_json(const std::string& json);

}  // namespace coronagan::io
