#include "hcma/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hcma {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class U>
void write_pod(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_pod(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw io_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, Tensor t) {
  for (auto& [n, _] : tensors_)
    if (n == name) throw io_error("checkpoint: duplicate tensor name " + name);
  tensors_.push_back({name, std::move(t)});
}

bool Checkpoint::has(const std::string& name) const {
  for (auto& [n, _] : tensors_)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (auto& [n, t] : tensors_)
    if (n == name) return t;
  throw io_error("checkpoint: missing tensor " + name);
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write("HCMA", 4);
  write_pod<uint32_t>(out, kVersion);
  write_pod<uint64_t>(out, tensors_.size());
  for (auto& [name, t] : tensors_) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape) write_pod<uint64_t>(out, static_cast<uint64_t>(e));
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw io_error("write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "HCMA", 4) != 0)
    throw io_error("checkpoint: bad magic in " + path.string());
  const uint32_t version = read_pod<uint32_t>(in);
  if (version != kVersion)
    throw io_error("checkpoint: unsupported version " + std::to_string(version));
  const uint64_t count = read_pod<uint64_t>(in);
  Checkpoint ck;
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw io_error("checkpoint: truncated file");
    const uint32_t rank = read_pod<uint32_t>(in);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      const uint64_t e = read_pod<uint64_t>(in);
      if (e == 0 || e > (1ull << 32)) throw io_error("checkpoint: bad extent");
      shape[d] = static_cast<int64_t>(e);
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw io_error("checkpoint: truncated file");
    ck.add(name, std::move(t));
  }
  return ck;
}

void Checkpoint::set_digest(uint64_t digest) {
  // One byte per float keeps the digest exact through the f32 tensor payload.
  Tensor t({8});
  for (int i = 0; i < 8; ++i) t[i] = float((digest >> (8 * i)) & 0xff);
  add("meta/config_digest", std::move(t));
}

uint64_t Checkpoint::digest() const {
  const Tensor& t = get("meta/config_digest");
  if (t.numel() != 8) throw io_error("checkpoint: malformed digest entry");
  uint64_t d = 0;
  for (int i = 0; i < 8; ++i) d |= uint64_t(uint8_t(t[i])) << (8 * i);
  return d;
}

}  // namespace hcma
