// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmate/model/model.hpp"
#include "mmate/numerics/array.hpp"

namespace mmate::model {

enum class DType { kF32, kF64 };

struct TensorRecord {
  std::string name;
  num::Array value;
};

// Single-file layout: a UTF-8 manifest
//   mmate-checkpoint 1
//   records <count>
//   <name> <f32|f64> <rank> <dim>...      (one line per array)
//   end
// followed by the raw little-endian arrays in manifest order.

std::string encode_checkpoint(const std::vector<TensorRecord>& records, DType dtype);
std::vector<TensorRecord> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorRecord>& records, DType dtype);
std::vector<TensorRecord> load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const void* data, std::size_t size);
/// Hash of the f64 encoding of every parameter of a model.
std::uint64_t parameter_hash(const Model& model);

/// Parameters plus `meta.*` scalars describing the architecture, so the
/// model can be rebuilt without a config file.
std::vector<TensorRecord> model_records(const Model& model, const std::map<std::string, double>& extra = {});
void save_model(const std::filesystem::path& path, const Model& model,
                const std::map<std::string, double>& extra = {}, DType dtype = DType::kF64);
struct LoadedModel {
  Model model;
  std::map<std::string, double> meta;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace mmate::model
