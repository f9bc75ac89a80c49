#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "divgce/tensor.hpp"

namespace divgce {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Binary checkpoint layout (all integers little-endian u32):
///   "DBKT" | version | count | count x { name_len | name | rank | dims... | f64 values }
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

namespace le {
void put_u32(std::ostream& os, std::uint32_t v);
void put_f64(std::ostream& os, double v);
void put_f32(std::ostream& os, float v);
std::uint32_t get_u32(std::istream& is);
double get_f64(std::istream& is);
float get_f32(std::istream& is);
}  // namespace le

}  // namespace divgce
