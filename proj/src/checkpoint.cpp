#include "kad/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "kad/config.hpp"

namespace kad {

namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw IoError("checkpoint " + path + ": truncated");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
  tensors.push_back({name, t, false});
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& nt : tensors)
    if (nt.name == name) return &nt.tensor;
  return nullptr;
}

void Checkpoint::add_network(const std::string& prefix, Network& net) {
  for (auto& p : named_params(net)) add(prefix + "." + p.name, p.tensor);
  for (auto& b : named_buffers(net)) add(prefix + "." + b.name, b.tensor);
}

void Checkpoint::load_into(const std::string& prefix, Network& net) const {
  auto copy_into = [&](NamedTensor& dst) {
    const Tensor* src = find(prefix + "." + dst.name);
    if (!src)
      throw IoError("checkpoint is missing tensor '" + prefix + "." + dst.name +
                    "'");
    if (src->shape() != dst.tensor.shape())
      throw IoError("checkpoint tensor '" + prefix + "." + dst.name +
                    "' has shape " + shape_str(src->shape()) + ", expected " +
                    shape_str(dst.tensor.shape()));
    std::memcpy(dst.tensor.data(), src->data(),
                sizeof(float) * static_cast<size_t>(src->numel()));
  };
  for (auto& p : named_params(net)) copy_into(p);
  for (auto& b : named_buffers(net)) copy_into(b);
}

void Checkpoint::add_scalar(const std::string& name, double v) {
  add(name, Tensor::scalar(static_cast<float>(v)));
}

double Checkpoint::scalar(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw IoError("checkpoint is missing scalar '" + name + "'");
  return t->item();
}

void Checkpoint::add_u64(const std::string& name, uint64_t v) {
  Tensor t = Tensor::zeros({4});
  for (int i = 0; i < 4; ++i)
    t.data()[i] = static_cast<float>((v >> (16 * i)) & 0xffff);
  add(name, t);
}

uint64_t Checkpoint::u64(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t || t->numel() != 4)
    throw IoError("checkpoint is missing u64 '" + name + "'");
  uint64_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint64_t>(static_cast<uint16_t>(t->data()[i])) << (16 * i);
  return v;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write("KADC", 4);
  write_le<uint32_t>(f, ck.version);
  write_le<uint64_t>(f, ck.config_hash);
  write_le<uint32_t>(f, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& nt : ck.tensors) {
    write_le<uint32_t>(f, static_cast<uint32_t>(nt.name.size()));
    f.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    const auto& shape = nt.tensor.shape();
    f.put(static_cast<char>(shape.size()));
    for (int d : shape) write_le<uint64_t>(f, static_cast<uint64_t>(d));
    f.write(reinterpret_cast<const char*>(nt.tensor.data()),
            static_cast<std::streamsize>(sizeof(float) * nt.tensor.numel()));
  }
  if (!f) throw IoError("short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw MissingArtifactError("checkpoint not found: " + path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "KADC", 4) != 0)
    throw IoError("checkpoint " + path + ": bad magic");
  Checkpoint ck;
  ck.version = read_le<uint32_t>(f, path);
  if (ck.version != kCheckpointVersion)
    throw IoError("checkpoint " + path + ": unsupported version " +
                  std::to_string(ck.version));
  ck.config_hash = read_le<uint64_t>(f, path);
  const uint32_t count = read_le<uint32_t>(f, path);
  ck.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_le<uint32_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const int rank = f.get();
    if (!f || rank < 0 || rank > 8)
      throw IoError("checkpoint " + path + ": bad tensor rank");
    Shape shape(static_cast<size_t>(rank));
    for (auto& d : shape)
      d = static_cast<int>(read_le<uint64_t>(f, path));
    Tensor t = Tensor::zeros(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(sizeof(float) * t.numel()));
    if (!f) throw IoError("checkpoint " + path + ": truncated payload");
    ck.tensors.push_back({std::move(name), std::move(t), false});
  }
  return ck;
}

uint64_t params_checksum(Network& net) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (auto& p : named_params(net)) {
    const uint64_t t =
        fnv1a64(p.tensor.data(), sizeof(float) * static_cast<size_t>(p.tensor.numel()));
    h ^= t;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace kad
