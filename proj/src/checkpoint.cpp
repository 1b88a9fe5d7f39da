#include "mtk/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "mtk/error.hpp"

namespace mtk::checkpoint {

namespace {

static_assert(std::endian::native == std::endian::little, "MTKP writer assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw SchemaError("checkpoint truncated");
  return v;
}

}  // namespace

void write(std::ostream& out, const std::vector<Named>& tensors, DType dtype) {
  out.write("MTKP", 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw SchemaError("tensor name too long: " + name.substr(0, 32));
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    if (dtype == DType::f64) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    } else {
      for (double v : t.values()) put<float>(out, static_cast<float>(v));
    }
  }
  if (!out) throw Error("io", "checkpoint write failed");
}

std::vector<Named> read(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MTKP", 4) != 0) {
    throw SchemaError("not an MTKP checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) {
    throw SchemaError("unsupported MTKP version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in);
  std::vector<Named> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw SchemaError("checkpoint truncated");
    const auto dtype = get<std::uint8_t>(in);
    if (dtype > 1) throw SchemaError("unknown dtype code " + std::to_string(dtype));
    const auto ndim = get<std::uint8_t>(in);
    Shape shape(ndim);
    for (auto& d : shape) d = get<std::uint32_t>(in);
    Tensor t(shape);
    if (dtype == static_cast<std::uint8_t>(DType::f64)) {
      if (!in.read(reinterpret_cast<char*>(t.data()),
                   static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
        throw SchemaError("checkpoint truncated");
      }
    } else {
      for (double& v : t.values()) v = get<float>(in);
    }
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

void save(const std::filesystem::path& path, const std::vector<Named>& tensors, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot open " + path.string() + " for writing");
  write(out, tensors, dtype);
}

std::vector<Named> load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  return read(in);
}

void save_store(const std::filesystem::path& path, const ParamStore& store) {
  std::vector<Named> tensors;
  for (const auto& e : store.entries()) tensors.push_back({e.name, e.value});
  save(path, tensors);
}

void load_store(const std::filesystem::path& path, ParamStore& store) {
  auto tensors = load(path);
  if (tensors.size() != store.entries().size()) {
    throw SchemaError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                      std::to_string(store.entries().size()));
  }
  for (auto& [name, t] : tensors) {
    if (!store.contains(name)) throw SchemaError("unexpected tensor " + name);
    Tensor& dst = store.get(name);
    if (dst.shape() != t.shape()) {
      throw SchemaError("shape of " + name + " is " + to_string(t.shape()) + ", expected " +
                        to_string(dst.shape()));
    }
    dst = std::move(t);
  }
}

}  // namespace mtk::checkpoint
