#include "style_mixer/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace style_mixer {
namespace {

constexpr char kMagic[8] = {'S', 'M', 'X', 'A', 'R', 'C', 'H', '1'};

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1, Int64 = 2 };

DType dtype_of(const torch::Tensor& t) {
    switch (t.scalar_type()) {
        case torch::kFloat32: return DType::Float32;
        case torch::kFloat64: return DType::Float64;
        case torch::kInt64: return DType::Int64;
        default: throw ArchiveError("unsupported tensor dtype for archive: " + std::string(c10::toString(t.scalar_type())));
    }
}

torch::ScalarType scalar_type_of(DType d) {
    switch (d) {
        case DType::Float32: return torch::kFloat32;
        case DType::Float64: return torch::kFloat64;
        case DType::Int64: return torch::kInt64;
    }
    throw ArchiveError("unknown dtype code");
}

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& value) {
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    return static_cast<std::size_t>(is.gcount()) == sizeof(T);
}

}  // namespace

const NamedArray* Archive::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

void Archive::add(std::string name, const torch::Tensor& data) {
    arrays.push_back({std::move(name), data.detach().to(torch::kCPU).contiguous().clone()});
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    std::ostringstream config;
    for (const auto& [k, v] : archive.config) config << k << '=' << v << '\n';
    const std::string config_text = config.str();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ArchiveError("cannot open for writing: " + tmp.string());
        os.write(kMagic, sizeof(kMagic));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(config_text.size()));
        os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(archive.arrays.size()));
        for (const auto& a : archive.arrays) {
            if (a.name.size() > 0xffff) throw ArchiveError("array name too long: " + a.name);
            const auto t = a.data.detach().to(torch::kCPU).contiguous();
            put<std::uint16_t>(os, static_cast<std::uint16_t>(a.name.size()));
            os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
            put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of(t)));
            put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dim()));
            for (auto d : t.sizes()) put<std::int64_t>(os, d);
            os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
        }
        if (!os) throw ArchiveError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ArchiveError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Archive read_archive(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ArchiveError("archive not found: " + path.string());
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArchiveError("cannot open archive: " + path.string());

    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(magic));
    if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ArchiveError("not a style_mixer archive (bad magic): " + path.string());

    Archive archive;
    std::uint32_t config_bytes = 0;
    if (!get(is, config_bytes)) throw ArchiveError("archive header truncated: " + path.string());
    std::string config_text(config_bytes, '\0');
    is.read(config_text.data(), config_bytes);
    if (static_cast<std::uint32_t>(is.gcount()) != config_bytes)
        throw ArchiveError("archive config block truncated: " + path.string());
    std::istringstream lines(config_text);
    for (std::string line; std::getline(lines, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        archive.config[line.substr(0, eq)] = line.substr(eq + 1);
    }

    std::uint32_t count = 0;
    if (!get(is, count)) {
        archive.truncated_at = "<array header>";
        return archive;
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t name_len = 0;
        if (!get(is, name_len)) {
            archive.truncated_at = "<array header>";
            return archive;
        }
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (is.gcount() != name_len) {
            archive.truncated_at = "<array header>";
            return archive;
        }
        std::uint8_t dtype = 0;
        std::uint8_t ndim = 0;
        if (!get(is, dtype) || !get(is, ndim) || dtype > 2) {
            archive.truncated_at = name;
            return archive;
        }
        std::vector<std::int64_t> dims(ndim);
        bool ok = true;
        for (auto& d : dims) ok = ok && get(is, d) && d >= 0;
        if (!ok) {
            archive.truncated_at = name;
            return archive;
        }
        auto t = torch::empty(dims, torch::TensorOptions().dtype(scalar_type_of(static_cast<DType>(dtype))));
        const auto nbytes = static_cast<std::streamsize>(t.nbytes());
        is.read(static_cast<char*>(t.data_ptr()), nbytes);
        if (is.gcount() != nbytes) {
            archive.truncated_at = name;
            return archive;
        }
        archive.arrays.push_back({std::move(name), std::move(t)});
    }
    return archive;
}

}  // namespace style_mixer
