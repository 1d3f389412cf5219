#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "spkmoco/tensor.hpp"

namespace spkmoco {

// Versioned binary container of string metadata and named tensors. Shared by
// checkpoints, feature archives, embedding archives and backend models; the
// `kind` header field tells them apart.
//
// Layout (little-endian):
//   "SPKM" | u32 version | str kind | u64 n_meta | (str key, str value)*
//   | u64 n_tensors | (str name, u64 rank, u64 dims[rank], f64 data[])*
// where str = u64 length + bytes. Doubles are written bit-for-bit.
struct TensorArchive {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;

  const Tensor& tensor(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string serialize_archive(const TensorArchive& archive);
TensorArchive deserialize_archive(std::string_view bytes);

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
// Throws FormatError on a bad header or when expected_kind is non-empty and
// does not match.
TensorArchive load_archive(const std::filesystem::path& path, std::string_view expected_kind = {});

}  // namespace spkmoco
