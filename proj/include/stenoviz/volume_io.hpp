#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "stenoviz/volume.hpp"

namespace stenoviz {

enum class VolumeFormat {
    Nrrd,       ///< .nrrd (attached) or .nhdr + detached data file
    MetaImage,  ///< .mhd + .raw, or .mha with LOCAL data
    RawJson,    ///< .raw + .json sidecar
};

/// Every element type the readers understand.
using AnyVolume = std::variant<Volume<std::uint8_t>, Volume<std::int16_t>, Volume<std::uint16_t>,
                               Volume<std::int32_t>, Volume<float>, Volume<double>>;

VolumeFormat format_from_path(const std::filesystem::path& path);
VolumeFormat format_from_string(const std::string& name);

AnyVolume read_any_volume(const std::filesystem::path& path);
AnyVolume read_any_volume(const std::filesystem::path& path, VolumeFormat format);

/// Parse a single-buffer volume (attached NRRD or MetaImage with LOCAL data).
AnyVolume parse_volume_bytes(std::string_view bytes, VolumeFormat format);

template <typename T>
void write_volume(const Volume<T>& v, const std::filesystem::path& path, VolumeFormat format);

template <typename T>
void write_volume(const Volume<T>& v, const std::filesystem::path& path) {
    write_volume(v, path, format_from_path(path));
}

/// Serialize to a single buffer (attached NRRD or MetaImage LOCAL).
template <typename T>
std::string serialize_volume(const Volume<T>& v, VolumeFormat format);

/// Convert any element type to T (static_cast per voxel; exact when the
/// stored type already is T).
template <typename T>
Volume<T> convert_volume(const AnyVolume& any) {
    return std::visit(
        [](const auto& v) {
            using Src = typename std::decay_t<decltype(v)>::value_type;
            if constexpr (std::is_same_v<Src, T>) {
                return v;
            } else {
                Volume<T> out(v.dims(), v.spacing(), v.origin());
                out.set_kind(v.kind());
                auto src = v.data();
                auto dst = out.data();
                for (std::size_t i = 0; i < src.size(); ++i)
                    dst[i] = static_cast<T>(src[i]);
                return out;
            }
        },
        any);
}

template <typename T>
Volume<T> read_volume(const std::filesystem::path& path) {
    return convert_volume<T>(read_any_volume(path));
}

template <typename T>
Volume<T> read_volume(const std::filesystem::path& path, VolumeFormat format) {
    return convert_volume<T>(read_any_volume(path, format));
}

}  // namespace stenoviz
