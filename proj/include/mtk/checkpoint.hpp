#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtk/params.hpp"

// MTKP container: "MTKP", u32 version, u32 count, then per tensor
// u16 name length + UTF-8 name, u8 dtype, u8 ndim, u32 dims, raw values.
// All integers and values little-endian.
namespace mtk::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

struct Named {
  std::string name;
  Tensor value;
};

// Values are narrowed to f32 when dtype is f32.
void write(std::ostream& out, const std::vector<Named>& tensors, DType dtype = DType::f64);
// Throws SchemaError on a bad magic, version, dtype or truncated stream.
std::vector<Named> read(std::istream& in);

void save(const std::filesystem::path& path, const std::vector<Named>& tensors,
          DType dtype = DType::f64);
std::vector<Named> load(const std::filesystem::path& path);

// Whole store, buffers included.
void save_store(const std::filesystem::path& path, const ParamStore& store);
// Names and shapes must match the store exactly.
void load_store(const std::filesystem::path& path, ParamStore& store);

}  // namespace mtk::checkpoint
