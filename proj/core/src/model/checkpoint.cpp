// SPDX-License-Identifier: Apache-2.0
#include "mmate/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mmate::model {
namespace {

constexpr const char* kMagic = "mmate-checkpoint 1";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const char* dtype_name(DType t) { return t == DType::kF32 ? "f32" : "f64"; }

double meta_value(const std::map<std::string, double>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint: missing metadata " + key);
  return it->second;
}

}  // namespace

std::string encode_checkpoint(const std::vector<TensorRecord>& records, DType dtype) {
  std::ostringstream head;
  head << kMagic << "\nrecords " << records.size() << "\n";
  for (const auto& r : records) {
    if (r.name.empty() || r.name.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: invalid record name '" + r.name + "'");
    }
    head << r.name << ' ' << dtype_name(dtype) << ' ' << r.value.rank();
    for (std::size_t dim : r.value.shape()) head << ' ' << dim;
    head << '\n';
  }
  head << "end\n";
  std::string out = head.str();
  for (const auto& r : records) {
    if (dtype == DType::kF64) {
      out.append(reinterpret_cast<const char*>(r.value.data()), r.value.size() * sizeof(double));
    } else {
      for (double v : r.value.values()) {
        const float f = static_cast<float>(v);
        out.append(reinterpret_cast<const char*>(&f), sizeof(float));
      }
    }
  }
  return out;
}

std::vector<TensorRecord> decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) throw std::runtime_error("checkpoint: truncated manifest");
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line() != kMagic) throw std::runtime_error("checkpoint: bad magic line");
  std::istringstream count_line(next_line());
  std::string word;
  std::size_t count = 0;
  if (!(count_line >> word >> count) || word != "records") throw std::runtime_error("checkpoint: bad record count");

  struct Entry {
    std::string name;
    DType dtype;
    num::Shape shape;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line(next_line());
    Entry e;
    std::string dt;
    std::size_t rank = 0;
    if (!(line >> e.name >> dt >> rank) || (dt != "f32" && dt != "f64") || rank == 0) {
      throw std::runtime_error("checkpoint: malformed manifest record " + std::to_string(i));
    }
    e.dtype = dt == "f32" ? DType::kF32 : DType::kF64;
    e.shape.resize(rank);
    for (auto& dim : e.shape) {
      if (!(line >> dim) || dim == 0) throw std::runtime_error("checkpoint: bad shape for " + e.name);
    }
    entries.push_back(std::move(e));
  }
  if (next_line() != "end") throw std::runtime_error("checkpoint: manifest not terminated");

  std::vector<TensorRecord> out;
  for (const auto& e : entries) {
    num::Array value(e.shape);
    const std::size_t width = e.dtype == DType::kF32 ? sizeof(float) : sizeof(double);
    if (bytes.size() - pos < value.size() * width) throw std::runtime_error("checkpoint: truncated data for " + e.name);
    if (e.dtype == DType::kF64) {
      std::memcpy(value.data(), bytes.data() + pos, value.size() * width);
    } else {
      for (std::size_t i = 0; i < value.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + pos + i * width, width);
        value[i] = f;
      }
    }
    pos += value.size() * width;
    out.push_back({e.name, std::move(value)});
  }
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes after data");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorRecord>& records, DType dtype) {
  const std::string bytes = encode_checkpoint(records, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<TensorRecord> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  return decode_checkpoint(buf.str());
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t parameter_hash(const Model& model) {
  std::vector<TensorRecord> records;
  for (const auto& p : model.parameters()) records.push_back({p.name, p.var.value()});
  const std::string bytes = encode_checkpoint(records, DType::kF64);
  return fnv1a64(bytes.data(), bytes.size());
}

std::vector<TensorRecord> model_records(const Model& model, const std::map<std::string, double>& extra) {
  const ModelConfig& c = model.config();
  std::map<std::string, double> meta = extra;
  meta["vocab"] = static_cast<double>(c.vocab);
  meta["d_model"] = static_cast<double>(c.d_model);
  meta["heads"] = static_cast<double>(c.heads);
  meta["layers"] = static_cast<double>(c.layers);
  meta["d_ff"] = static_cast<double>(c.d_ff);
  meta["window_tau"] = static_cast<double>(c.window.tau);
  meta["window_s"] = static_cast<double>(c.window.s);
  meta["window_mask_wrapped"] = c.window.mask_wrapped ? 1.0 : 0.0;
  meta["scan_chunk"] = static_cast<double>(c.scan.chunk);
  meta["mixer"] = model.kind() == MixerKind::kAttention ? 0.0 : 1.0;
  meta["lora_rank"] = model.has_lora() ? static_cast<double>(model.layers().front().ffn.lora1->rank) : 0.0;

  std::vector<TensorRecord> records;
  for (const auto& [k, v] : meta) records.push_back({"meta." + k, num::Array::scalar(v)});
  for (const auto& p : model.parameters()) records.push_back({p.name, p.var.value()});
  return records;
}

void save_model(const std::filesystem::path& path, const Model& model, const std::map<std::string, double>& extra,
                DType dtype) {
  save_checkpoint(path, model_records(model, extra), dtype);
}

LoadedModel load_model(const std::filesystem::path& path) {
  const auto records = load_checkpoint(path);
  LoadedModel out;
  std::map<std::string, const num::Array*> params;
  for (const auto& r : records) {
    if (r.name.rfind("meta.", 0) == 0) {
      out.meta[r.name.substr(5)] = r.value[0];
    } else {
      params[r.name] = &r.value;
    }
  }
  ModelConfig c;
  c.vocab = static_cast<std::size_t>(meta_value(out.meta, "vocab"));
  c.d_model = static_cast<std::size_t>(meta_value(out.meta, "d_model"));
  c.heads = static_cast<std::size_t>(meta_value(out.meta, "heads"));
  c.layers = static_cast<std::size_t>(meta_value(out.meta, "layers"));
  c.d_ff = static_cast<std::size_t>(meta_value(out.meta, "d_ff"));
  c.window.tau = static_cast<std::size_t>(meta_value(out.meta, "window_tau"));
  c.window.s = static_cast<std::size_t>(meta_value(out.meta, "window_s"));
  c.window.mask_wrapped = meta_value(out.meta, "window_mask_wrapped") != 0.0;
  c.scan.chunk = static_cast<std::size_t>(meta_value(out.meta, "scan_chunk"));

  // Build a skeleton of the right structure, then overwrite every slot.
  num::Rng rng(0);
  Model m = Model::teacher(c, rng);
  if (meta_value(out.meta, "mixer") != 0.0) m = Model::student_from(m, rng);
  const auto rank = static_cast<std::size_t>(meta_value(out.meta, "lora_rank"));
  if (rank) m.attach_lora(rank, rng);

  const auto slots = m.parameters();
  if (slots.size() != params.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(params.size()) + " parameter records, model expects " +
                             std::to_string(slots.size()));
  }
  for (const auto& p : slots) {
    const auto it = params.find(p.name);
    if (it == params.end()) throw std::runtime_error("checkpoint: missing parameter " + p.name);
    num::Var v = p.var;
    if (it->second->shape() != v.shape()) throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    v.mutable_value() = *it->second;
  }
  out.model = std::move(m);
  return out;
}

}  // namespace mmate::model
