#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "style_mixer/common.hpp"

namespace style_mixer {

/// Failure to read or write a named-array archive.
class ArchiveError : public Error {
public:
    using Error::Error;
};

// On-disk layout (all integers little endian):
//
//   "SMXARCH1"                        8-byte magic
//   u32  config_bytes, then that many bytes of "key=value\n" lines
//   u32  array_count
//   per array:
//     u16 name_len, name bytes
//     u8  dtype (0 = float32, 1 = float64, 2 = int64)
//     u8  ndim, then ndim x i64 dims
//     raw element data, row-major
struct NamedArray {
    std::string name;
    torch::Tensor data;
};

struct Archive {
    std::map<std::string, std::string> config;
    std::vector<NamedArray> arrays;

    /// Set when the file ended early. Holds the name of the first array
    /// that could not be read completely, or "<array header>" when the
    /// cut fell between arrays.
    std::optional<std::string> truncated_at;

    const NamedArray* find(const std::string& name) const;
    void add(std::string name, const torch::Tensor& data);
};

void write_archive(const std::filesystem::path& path, const Archive& archive);

/// Reads an archive. A missing file or bad magic throws ArchiveError; a file
/// cut short returns the arrays read so far with `truncated_at` set, so
/// callers can name the first missing or malformed entry themselves.
Archive read_archive(const std::filesystem::path& path);

}  // namespace style_mixer
