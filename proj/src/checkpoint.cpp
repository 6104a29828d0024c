#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "ptune/training.hpp"

// Single-file container: length-prefixed header (version, config hash, prompt
// config as JSON, metrics snapshot) followed by named little-endian float64
// arrays. Full layout in docs/checkpoint-format.md.

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian");

namespace ptune {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 0;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError("checkpoint: truncated file");
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw DataError("checkpoint: truncated file");
  return v;
}

std::string read_string(std::istream& in, std::uint32_t max_len = 1u << 24) {
  const std::uint32_t len = read_u32(in);
  if (len > max_len) throw DataError("checkpoint: implausible string length");
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), static_cast<std::streamsize>(len)))
    throw DataError("checkpoint: truncated file");
  return s;
}

std::string hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& metrics_json,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);

  out.write(kMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u64(out, state.backbone->config().hash());
  write_string(out, state.prompts.config.to_json());
  write_string(out, metrics_json);

  const auto arrays = all_trainables(state);
  write_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    write_string(out, a.name);
    out.put(static_cast<char>(kDtypeF64));
    write_u32(out, static_cast<std::uint32_t>(a.tensor.ndim()));
    for (std::size_t d : a.tensor.shape()) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(a.tensor.value().data()),
              static_cast<std::streamsize>(a.tensor.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed: " + path);
}

CheckpointBlob read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);

  CheckpointBlob blob;
  blob.version = read_u32(in);
  if (blob.version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(blob.version));
  blob.model_hash = read_u64(in);
  blob.prompt_config = PromptConfig::from_json(read_string(in));
  blob.metrics_json = read_string(in);

  const std::uint32_t count = read_u32(in);
  if (count > (1u << 20)) throw DataError("checkpoint: implausible array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in, 1u << 16);
    const int dtype = in.get();
    if (dtype != kDtypeF64) throw DataError("checkpoint: unknown dtype tag for " + name);
    const std::uint32_t ndim = read_u32(in);
    if (ndim > 8) throw DataError("checkpoint: implausible rank for " + name);
    Shape shape(ndim);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(read_u64(in));
      n *= d;
    }
    if (n > (1u << 28)) throw DataError("checkpoint: implausible array size for " + name);
    std::vector<double> data(n);
    if (n > 0 && !in.read(reinterpret_cast<char*>(data.data()),
                          static_cast<std::streamsize>(n * sizeof(double))))
      throw DataError("checkpoint: truncated payload for " + name);
    blob.arrays.emplace_back(name, Tensor::leaf(std::move(shape), std::move(data)));
  }
  return blob;
}

TrainState load_checkpoint(const std::string& path, const FrozenBackbone& backbone,
                           const std::vector<DatasetEntry>& datasets) {
  CheckpointBlob blob = read_checkpoint(path);
  const std::uint64_t bb_hash = backbone.config().hash();
  if (blob.model_hash != bb_hash)
    throw ConfigError("checkpoint model hash " + hex(blob.model_hash) +
                      " does not match backbone config hash " + hex(bb_hash));

  TrainState state = init_train_state(backbone, blob.prompt_config, datasets, /*seed=*/0);
  auto params = all_trainables(state);
  if (params.size() != blob.arrays.size())
    throw DataError("checkpoint: expected " + std::to_string(params.size()) + " arrays, found " +
                    std::to_string(blob.arrays.size()));
  for (auto& p : params) {
    const auto it =
        std::find_if(blob.arrays.begin(), blob.arrays.end(),
                     [&](const auto& a) { return a.first == p.name; });
    if (it == blob.arrays.end()) throw DataError("checkpoint: missing array " + p.name);
    if (it->second.shape() != p.tensor.shape())
      throw DataError("checkpoint: shape mismatch for " + p.name + ": file " +
                      shape_str(it->second.shape()) + " vs state " + shape_str(p.tensor.shape()));
    p.tensor.value() = it->second.value();
  }
  return state;
}

}  // namespace ptune
