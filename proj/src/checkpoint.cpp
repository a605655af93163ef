#include "bunet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "bunet/rng.hpp"

namespace bunet {

namespace {

constexpr char kMagic[4] = {'P', 'B', 'E', 'U'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_string(std::ofstream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_f32s(std::ofstream& out, const float* data, std::size_t n) {
  // Little-endian float payload; on little-endian hosts this is a straight copy.
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u;
    std::memcpy(&u, &data[i], 4);
    put_u32(out, u);
  }
}

struct Reader {
  std::ifstream in;
  std::string path;

  [[noreturn]] void bad(const std::string& what) {
    fail("load_checkpoint: " + path + ": " + what);
  }

  std::uint32_t u32() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) bad("truncated (while reading a 32-bit field)");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }

  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | static_cast<std::uint64_t>(u32()) << 32;
  }

  std::string str() {
    const std::uint32_t n = u32();
    if (n > 100'000'000u) bad("implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) bad("truncated (while reading a string)");
    return s;
  }

  std::vector<float> f32s(std::size_t n) {
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = u32();
      std::memcpy(&v[i], &u, 4);
    }
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const ModuleParams<float>& params,
                     const Velocities& velocity, std::uint64_t iteration,
                     const std::string& config_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, fnv1a64(config_json));
  put_string(out, config_json);
  put_u64(out, iteration);

  put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    put_string(out, e.name);
    put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (int i = 0; i < e.tensor.rank(); ++i)
      put_u32(out, static_cast<std::uint32_t>(e.tensor.shape()[i]));
    put_f32s(out, e.tensor.data(), static_cast<std::size_t>(e.tensor.numel()));
  }

  put_u32(out, static_cast<std::uint32_t>(velocity.size()));
  for (const auto& [name, data] : velocity) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    put_f32s(out, data.data(), data.size());
  }
  if (!out) fail("save_checkpoint: short write to '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
  Reader r{std::ifstream(path, std::ios::binary), path};
  if (!r.in) fail("load_checkpoint: cannot open '" + path + "'");

  char magic[4];
  r.in.read(magic, 4);
  if (!r.in || std::memcmp(magic, kMagic, 4) != 0)
    r.bad("bad magic (not a checkpoint file)");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    r.bad("unsupported format version " + std::to_string(version));

  CheckpointData c;
  c.config_digest = r.u64();
  c.config_json = r.str();
  if (fnv1a64(c.config_json) != c.config_digest)
    r.bad("config digest mismatch (corrupted file?)");
  c.iteration = r.u64();

  const std::uint32_t n_arrays = r.u32();
  c.arrays.reserve(n_arrays);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 4) r.bad("array '" + a.name + "' has invalid rank");
    std::vector<int> dims(rank);
    for (std::uint32_t d = 0; d < rank; ++d) dims[d] = static_cast<int>(r.u32());
    switch (rank) {
      case 1: a.shape = Shape{dims[0]}; break;
      case 2: a.shape = Shape{dims[0], dims[1]}; break;
      case 3: a.shape = Shape{dims[0], dims[1], dims[2]}; break;
      default: a.shape = Shape{dims[0], dims[1], dims[2], dims[3]}; break;
    }
    a.data = r.f32s(static_cast<std::size_t>(a.shape.numel()));
    c.arrays.push_back(std::move(a));
  }

  const std::uint32_t n_vel = r.u32();
  c.velocities.reserve(n_vel);
  for (std::uint32_t i = 0; i < n_vel; ++i) {
    NamedArray v;
    v.name = r.str();
    const std::uint32_t len = r.u32();
    v.shape = Shape{static_cast<int>(len)};
    v.data = r.f32s(len);
    c.velocities.push_back(std::move(v));
  }
  return c;
}

void apply_checkpoint(const CheckpointData& ckpt, ModuleParams<float>& params,
                      Velocities* velocity) {
  std::set<std::string> stored;
  for (const NamedArray& a : ckpt.arrays) {
    stored.insert(a.name);
    if (!params.has(a.name))
      fail("apply_checkpoint: checkpoint array '" + a.name +
           "' does not exist in the model (config mismatch?)");
    Tensor<float>& t = params.at(a.name);
    if (t.shape() != a.shape)
      fail("apply_checkpoint: shape mismatch for '" + a.name + "': model " + t.shape().str() +
           " vs checkpoint " + a.shape.str());
    std::copy(a.data.begin(), a.data.end(), t.data());
  }
  for (const auto& e : params.entries())
    if (!stored.count(e.name))
      fail("apply_checkpoint: model parameter '" + e.name + "' missing from the checkpoint");
  if (velocity) {
    velocity->clear();
    for (const NamedArray& v : ckpt.velocities) (*velocity)[v.name] = v.data;
  }
}

}  // namespace bunet
