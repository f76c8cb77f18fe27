#include "stenoviz/volume_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace stenoviz {

std::string to_string(ElementKind kind) {
    switch (kind) {
    case ElementKind::Intensity: return "intensity";
    case ElementKind::Probability: return "probability";
    case ElementKind::Binary: return "binary";
    case ElementKind::ComponentId: return "component_id";
    }
    return "intensity";
}

ElementKind element_kind_from_string(const std::string& name) {
    if (name == "intensity") return ElementKind::Intensity;
    if (name == "probability") return ElementKind::Probability;
    if (name == "binary") return ElementKind::Binary;
    if (name == "component_id") return ElementKind::ComponentId;
    throw ParameterError("unknown element kind '" + name + "'");
}

namespace {

namespace fs = std::filesystem;

enum class DType { U8, I16, U16, I32, F32, F64 };

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, std::uint8_t>) return DType::U8;
    else if constexpr (std::is_same_v<T, std::int16_t>) return DType::I16;
    else if constexpr (std::is_same_v<T, std::uint16_t>) return DType::U16;
    else if constexpr (std::is_same_v<T, std::int32_t>) return DType::I32;
    else if constexpr (std::is_same_v<T, float>) return DType::F32;
    else {
        static_assert(std::is_same_v<T, double>, "unsupported voxel type");
        return DType::F64;
    }
}

const char* json_dtype_name(DType t) {
    switch (t) {
    case DType::U8: return "uint8";
    case DType::I16: return "int16";
    case DType::U16: return "uint16";
    case DType::I32: return "int32";
    case DType::F32: return "float32";
    case DType::F64: return "float64";
    }
    return "uint8";
}

const char* nrrd_type_name(DType t) {
    switch (t) {
    case DType::U8: return "uchar";
    case DType::I16: return "short";
    case DType::U16: return "ushort";
    case DType::I32: return "int";
    case DType::F32: return "float";
    case DType::F64: return "double";
    }
    return "uchar";
}

const char* met_type_name(DType t) {
    switch (t) {
    case DType::U8: return "MET_UCHAR";
    case DType::I16: return "MET_SHORT";
    case DType::U16: return "MET_USHORT";
    case DType::I32: return "MET_INT";
    case DType::F32: return "MET_FLOAT";
    case DType::F64: return "MET_DOUBLE";
    }
    return "MET_UCHAR";
}

std::optional<DType> parse_dtype(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    static const std::map<std::string, DType> table{
        {"uchar", DType::U8},         {"unsigned char", DType::U8}, {"uint8", DType::U8},
        {"uint8_t", DType::U8},       {"met_uchar", DType::U8},     {"short", DType::I16},
        {"signed short", DType::I16}, {"int16", DType::I16},        {"int16_t", DType::I16},
        {"met_short", DType::I16},    {"ushort", DType::U16},       {"unsigned short", DType::U16},
        {"uint16", DType::U16},       {"uint16_t", DType::U16},     {"met_ushort", DType::U16},
        {"int", DType::I32},          {"signed int", DType::I32},   {"int32", DType::I32},
        {"int32_t", DType::I32},      {"met_int", DType::I32},      {"float", DType::F32},
        {"float32", DType::F32},      {"met_float", DType::F32},    {"double", DType::F64},
        {"float64", DType::F64},      {"met_double", DType::F64},
    };
    const auto it = table.find(name);
    if (it == table.end())
        return std::nullopt;
    return it->second;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

std::vector<double> parse_numbers(const std::string& text, std::size_t offset) {
    std::vector<double> out;
    std::string cleaned = text;
    for (char& c : cleaned)
        if (c == '(' || c == ')' || c == ',')
            c = ' ';
    std::istringstream in(cleaned);
    std::string tok;
    while (in >> tok) {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size())
            throw ParseError("expected a number, found '" + tok + "'", offset);
        out.push_back(v);
    }
    return out;
}

struct Header {
    DType dtype = DType::U8;
    Dims3 dims{};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};
    bool big_endian = false;
    bool gzip = false;
    std::optional<ElementKind> kind;
    std::string data_file;          ///< empty: data follows the header
    std::size_t data_offset = 0;    ///< offset of attached data in the buffer
};

Dims3 dims_from(const std::vector<double>& sizes, std::size_t offset) {
    if (sizes.empty() || sizes.size() > 3)
        throw ParseError("expected 1 to 3 sizes", offset);
    std::array<int, 3> d{1, 1, 1};
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] < 1 || sizes[i] != std::floor(sizes[i]))
            throw ParseError("sizes must be positive integers", offset);
        d[i] = static_cast<int>(sizes[i]);
    }
    return {d[0], d[1], d[2]};
}

Vec3 vec_from(const std::vector<double>& v, std::size_t offset, double fill) {
    if (v.empty() || v.size() > 3)
        throw ParseError("expected 1 to 3 components", offset);
    std::array<double, 3> a{fill, fill, fill};
    std::copy(v.begin(), v.end(), a.begin());
    return {a[0], a[1], a[2]};
}

Header parse_nrrd_header(std::string_view bytes, bool detached_allowed) {
    Header h;
    std::size_t pos = 0;
    std::size_t line_start = 0;
    auto next_line = [&](std::string& line) {
        line_start = pos;
        if (pos >= bytes.size())
            return false;
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string_view::npos) {
            line = std::string(bytes.substr(pos));
            pos = bytes.size();
        } else {
            line = std::string(bytes.substr(pos, nl - pos));
            pos = nl + 1;
        }
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        return true;
    };

    std::string line;
    if (!next_line(line) || line.rfind("NRRD000", 0) != 0)
        throw ParseError("missing NRRD magic", 0);

    bool have_type = false, have_sizes = false, have_encoding = false;
    int dimension = 0;
    std::optional<Vec3> directions_spacing;
    std::optional<Vec3> spacings;
    while (next_line(line)) {
        if (line.empty())
            break;
        if (line[0] == '#')
            continue;
        if (const auto kv = line.find(":="); kv != std::string::npos) {
            if (trim(line.substr(0, kv)) == "stenoviz_kind")
                h.kind = element_kind_from_string(trim(line.substr(kv + 2)));
            continue;
        }
        const auto colon = line.find(": ");
        if (colon == std::string::npos)
            throw ParseError("malformed NRRD field '" + line + "'", line_start);
        std::string key = trim(line.substr(0, colon));
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        const std::string value = trim(line.substr(colon + 2));

        if (key == "type") {
            const auto t = parse_dtype(value);
            if (!t)
                throw ParseError("unsupported NRRD type '" + value + "'", line_start);
            h.dtype = *t;
            have_type = true;
        } else if (key == "dimension") {
            const auto n = parse_numbers(value, line_start);
            if (n.size() != 1 || n[0] < 1 || n[0] > 3)
                throw ParseError("dimension must be 1, 2 or 3", line_start);
            dimension = static_cast<int>(n[0]);
        } else if (key == "sizes") {
            h.dims = dims_from(parse_numbers(value, line_start), line_start);
            have_sizes = true;
        } else if (key == "spacings") {
            spacings = vec_from(parse_numbers(value, line_start), line_start, 1.0);
        } else if (key == "space directions") {
            std::vector<Vec3> axes;
            std::istringstream in(value);
            std::string tok;
            while (in >> tok) {
                if (tok == "none")
                    continue;
                const auto n = parse_numbers(tok, line_start);
                if (n.size() != 3)
                    throw ParseError("space direction must have 3 components", line_start);
                axes.push_back({n[0], n[1], n[2]});
            }
            if (axes.empty() || axes.size() > 3)
                throw ParseError("expected up to 3 space directions", line_start);
            std::array<double, 3> s{1.0, 1.0, 1.0};
            for (std::size_t i = 0; i < axes.size(); ++i)
                s[i] = std::sqrt(axes[i].x * axes[i].x + axes[i].y * axes[i].y + axes[i].z * axes[i].z);
            directions_spacing = Vec3{s[0], s[1], s[2]};
        } else if (key == "space origin") {
            h.origin = vec_from(parse_numbers(value, line_start), line_start, 0.0);
        } else if (key == "endian") {
            h.big_endian = value == "big";
        } else if (key == "encoding") {
            if (value == "raw")
                h.gzip = false;
            else if (value == "gzip" || value == "gz")
                h.gzip = true;
            else
                throw ParseError("unsupported NRRD encoding '" + value + "'", line_start);
            have_encoding = true;
        } else if (key == "data file" || key == "datafile") {
            if (!detached_allowed)
                throw ParseError("detached data file not allowed here", line_start);
            h.data_file = value;
        }
    }
    if (!have_type)
        throw ParseError("NRRD header lacks 'type'", line_start);
    if (!have_sizes)
        throw ParseError("NRRD header lacks 'sizes'", line_start);
    if (!have_encoding)
        throw ParseError("NRRD header lacks 'encoding'", line_start);
    (void)dimension;
    if (directions_spacing)
        h.spacing = *directions_spacing;
    else if (spacings)
        h.spacing = *spacings;
    if (!(h.spacing.x > 0 && h.spacing.y > 0 && h.spacing.z > 0))
        throw ParseError("spacing must be positive", line_start);
    h.data_offset = pos;
    return h;
}

Header parse_meta_header(std::string_view bytes, bool detached_allowed) {
    Header h;
    std::size_t pos = 0;
    bool have_dims = false, have_type = false, have_data = false;
    while (pos < bytes.size() && !have_data) {
        const std::size_t line_start = pos;
        auto nl = bytes.find('\n', pos);
        std::string line(bytes.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
        pos = nl == std::string_view::npos ? bytes.size() : nl + 1;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (trim(line).empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("malformed MetaImage line '" + line + "'", line_start);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "NDims") {
            const auto n = parse_numbers(value, line_start);
            if (n.size() != 1 || n[0] < 1 || n[0] > 3)
                throw ParseError("NDims must be 1, 2 or 3", line_start);
        } else if (key == "DimSize") {
            h.dims = dims_from(parse_numbers(value, line_start), line_start);
            have_dims = true;
        } else if (key == "ElementSpacing" || key == "ElementSize") {
            h.spacing = vec_from(parse_numbers(value, line_start), line_start, 1.0);
            if (!(h.spacing.x > 0 && h.spacing.y > 0 && h.spacing.z > 0))
                throw ParseError("ElementSpacing must be positive", line_start);
        } else if (key == "Offset" || key == "Origin" || key == "Position") {
            h.origin = vec_from(parse_numbers(value, line_start), line_start, 0.0);
        } else if (key == "ElementType") {
            const auto t = parse_dtype(value);
            if (!t)
                throw ParseError("unsupported ElementType '" + value + "'", line_start);
            h.dtype = *t;
            have_type = true;
        } else if (key == "ElementByteOrderMSB" || key == "BinaryDataByteOrderMSB") {
            h.big_endian = value == "True" || value == "true" || value == "1";
        } else if (key == "CompressedData") {
            if (value == "True" || value == "true")
                throw ParseError("compressed MetaImage data is not supported", line_start);
        } else if (key == "ElementNumberOfChannels") {
            if (value != "1")
                throw ParseError("only single-channel images are supported", line_start);
        } else if (key == "StenovizKind") {
            h.kind = element_kind_from_string(value);
        } else if (key == "ElementDataFile") {
            if (value != "LOCAL") {
                if (!detached_allowed)
                    throw ParseError("detached data file not allowed here", line_start);
                h.data_file = value;
            }
            have_data = true;
        }
    }
    if (!have_dims)
        throw ParseError("MetaImage header lacks DimSize", pos);
    if (!have_type)
        throw ParseError("MetaImage header lacks ElementType", pos);
    if (!have_data)
        throw ParseError("MetaImage header lacks ElementDataFile", pos);
    h.data_offset = pos;
    return h;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error("write failed for '" + path.string() + "'");
}

std::string gunzip(std::string_view in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK)
        throw Error("zlib init failed");
    std::string out;
    std::array<char, 1 << 16> buf{};
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    while (ret != Z_STREAM_END) {
        zs.next_out = reinterpret_cast<Bytef*>(buf.data());
        zs.avail_out = static_cast<uInt>(buf.size());
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw IntegrityError("corrupt gzip payload");
        }
        out.append(buf.data(), buf.size() - zs.avail_out);
        if (ret == Z_OK && zs.avail_in == 0 && zs.avail_out != 0)
            break;
    }
    inflateEnd(&zs);
    return out;
}

template <typename T>
Volume<T> decode_typed(const Header& h, std::string_view payload) {
    const std::size_t n = h.dims.count();
    if (payload.size() != n * sizeof(T))
        throw IntegrityError("declared sizes " + std::to_string(h.dims.x) + "x" + std::to_string(h.dims.y) + "x" +
                             std::to_string(h.dims.z) + " need " + std::to_string(n) + " elements but data holds " +
                             std::to_string(payload.size() / sizeof(T)) +
                             (payload.size() % sizeof(T) ? " (plus a partial element)" : ""));
    std::vector<T> data(n);
    std::memcpy(data.data(), payload.data(), payload.size());
    const bool host_big = std::endian::native == std::endian::big;
    if (sizeof(T) > 1 && h.big_endian != host_big) {
        for (auto& v : data) {
            auto* b = reinterpret_cast<unsigned char*>(&v);
            std::reverse(b, b + sizeof(T));
        }
    }
    Volume<T> out(h.dims, h.spacing, h.origin, std::move(data));
    if (h.kind)
        out.set_kind(*h.kind);
    return out;
}

AnyVolume decode(const Header& h, std::string_view payload) {
    std::string inflated;
    if (h.gzip) {
        inflated = gunzip(payload);
        payload = inflated;
    }
    switch (h.dtype) {
    case DType::U8: return decode_typed<std::uint8_t>(h, payload);
    case DType::I16: return decode_typed<std::int16_t>(h, payload);
    case DType::U16: return decode_typed<std::uint16_t>(h, payload);
    case DType::I32: return decode_typed<std::int32_t>(h, payload);
    case DType::F32: return decode_typed<float>(h, payload);
    case DType::F64: return decode_typed<double>(h, payload);
    }
    throw ParseError("unsupported element type", 0);
}

AnyVolume read_nrrd(const fs::path& path) {
    const std::string bytes = read_file(path);
    const Header h = parse_nrrd_header(bytes, true);
    if (!h.data_file.empty())
        return decode(h, read_file(path.parent_path() / h.data_file));
    return decode(h, std::string_view(bytes).substr(h.data_offset));
}

AnyVolume read_meta(const fs::path& path) {
    const std::string bytes = read_file(path);
    const Header h = parse_meta_header(bytes, true);
    if (!h.data_file.empty())
        return decode(h, read_file(path.parent_path() / h.data_file));
    return decode(h, std::string_view(bytes).substr(h.data_offset));
}

fs::path sidecar_json(const fs::path& path) {
    auto p = path;
    return p.replace_extension(".json");
}

AnyVolume read_raw_json(const fs::path& path) {
    const fs::path json_path = sidecar_json(path);
    const std::string text = read_file(json_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("sidecar JSON: ") + e.what(), e.byte);
    }
    Header h;
    try {
        const auto dims = j.at("dims").get<std::vector<double>>();
        h.dims = dims_from(dims, 0);
        h.spacing = vec_from(j.at("spacing").get<std::vector<double>>(), 0, 1.0);
        h.origin = vec_from(j.value("origin", std::vector<double>{0, 0, 0}), 0, 0.0);
        const auto dt = parse_dtype(j.at("dtype").get<std::string>());
        if (!dt)
            throw ParseError("unsupported dtype '" + j.at("dtype").get<std::string>() + "'", 0);
        h.dtype = *dt;
        if (j.contains("element_kind"))
            h.kind = element_kind_from_string(j.at("element_kind").get<std::string>());
        h.big_endian = j.value("endian", std::string("little")) == "big";
        h.data_file = j.value("data_file", path.stem().string() + ".raw");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("sidecar JSON: ") + e.what(), 0);
    }
    if (!(h.spacing.x > 0 && h.spacing.y > 0 && h.spacing.z > 0))
        throw ParseError("sidecar spacing must be positive", 0);
    return decode(h, read_file(json_path.parent_path() / h.data_file));
}

template <typename T>
std::string_view raw_bytes(const Volume<T>& v) {
    static_assert(std::endian::native == std::endian::little, "writers assume a little-endian host");
    return {reinterpret_cast<const char*>(v.data().data()), v.size() * sizeof(T)};
}

template <typename T>
std::string nrrd_header(const Volume<T>& v, const std::string& data_file) {
    const auto& s = v.spacing();
    const auto& o = v.origin();
    std::ostringstream h;
    h << "NRRD0004\n"
      << "type: " << nrrd_type_name(dtype_of<T>()) << "\n"
      << "dimension: 3\n"
      << "space: left-posterior-superior\n"
      << "sizes: " << v.dims().x << " " << v.dims().y << " " << v.dims().z << "\n"
      << "space directions: (" << format_double(s.x) << ",0,0) (0," << format_double(s.y) << ",0) (0,0,"
      << format_double(s.z) << ")\n"
      << "kinds: domain domain domain\n"
      << "endian: little\n"
      << "encoding: raw\n"
      << "space origin: (" << format_double(o.x) << "," << format_double(o.y) << "," << format_double(o.z)
      << ")\n";
    if (!data_file.empty())
        h << "data file: " << data_file << "\n";
    h << "stenoviz_kind:=" << to_string(v.kind()) << "\n";
    return h.str();
}

template <typename T>
std::string meta_header(const Volume<T>& v, const std::string& data_file) {
    const auto& s = v.spacing();
    const auto& o = v.origin();
    std::ostringstream h;
    h << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "CompressedData = False\n"
      << "Offset = " << format_double(o.x) << " " << format_double(o.y) << " " << format_double(o.z) << "\n"
      << "ElementSpacing = " << format_double(s.x) << " " << format_double(s.y) << " " << format_double(s.z)
      << "\n"
      << "DimSize = " << v.dims().x << " " << v.dims().y << " " << v.dims().z << "\n"
      << "StenovizKind = " << to_string(v.kind()) << "\n"
      << "ElementType = " << met_type_name(dtype_of<T>()) << "\n"
      << "ElementDataFile = " << (data_file.empty() ? "LOCAL" : data_file) << "\n";
    return h.str();
}

bool has_ext(const fs::path& p, std::string_view ext) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ext;
}

}  // namespace

VolumeFormat format_from_path(const fs::path& path) {
    if (has_ext(path, ".nrrd") || has_ext(path, ".nhdr"))
        return VolumeFormat::Nrrd;
    if (has_ext(path, ".mhd") || has_ext(path, ".mha"))
        return VolumeFormat::MetaImage;
    if (has_ext(path, ".json") || has_ext(path, ".raw"))
        return VolumeFormat::RawJson;
    throw ParameterError("cannot infer volume format from '" + path.string() + "'");
}

VolumeFormat format_from_string(const std::string& name) {
    if (name == "nrrd") return VolumeFormat::Nrrd;
    if (name == "mhd" || name == "mha" || name == "metaimage") return VolumeFormat::MetaImage;
    if (name == "raw" || name == "json" || name == "rawjson") return VolumeFormat::RawJson;
    throw ParameterError("unknown volume format '" + name + "'");
}

AnyVolume read_any_volume(const fs::path& path) { return read_any_volume(path, format_from_path(path)); }

AnyVolume read_any_volume(const fs::path& path, VolumeFormat format) {
    switch (format) {
    case VolumeFormat::Nrrd: return read_nrrd(path);
    case VolumeFormat::MetaImage: return read_meta(path);
    case VolumeFormat::RawJson: return read_raw_json(path);
    }
    throw ParameterError("unknown volume format");
}

AnyVolume parse_volume_bytes(std::string_view bytes, VolumeFormat format) {
    switch (format) {
    case VolumeFormat::Nrrd: {
        const Header h = parse_nrrd_header(bytes, false);
        return decode(h, bytes.substr(h.data_offset));
    }
    case VolumeFormat::MetaImage: {
        const Header h = parse_meta_header(bytes, false);
        return decode(h, bytes.substr(h.data_offset));
    }
    case VolumeFormat::RawJson: break;
    }
    throw ParameterError("raw+JSON volumes need two files and cannot be parsed from one buffer");
}

template <typename T>
std::string serialize_volume(const Volume<T>& v, VolumeFormat format) {
    switch (format) {
    case VolumeFormat::Nrrd: return nrrd_header(v, "") + "\n" + std::string(raw_bytes(v));
    case VolumeFormat::MetaImage: return meta_header(v, "") + std::string(raw_bytes(v));
    case VolumeFormat::RawJson: break;
    }
    throw ParameterError("raw+JSON volumes cannot be serialized to one buffer");
}

template <typename T>
void write_volume(const Volume<T>& v, const fs::path& path, VolumeFormat format) {
    switch (format) {
    case VolumeFormat::Nrrd:
        if (has_ext(path, ".nhdr")) {
            auto raw = path;
            raw.replace_extension(".raw");
            write_file(raw, raw_bytes(v));
            write_file(path, nrrd_header(v, raw.filename().string()));
        } else {
            write_file(path, serialize_volume(v, format));
        }
        return;
    case VolumeFormat::MetaImage:
        if (has_ext(path, ".mha")) {
            write_file(path, serialize_volume(v, format));
        } else {
            auto raw = path;
            raw.replace_extension(".raw");
            write_file(raw, raw_bytes(v));
            write_file(path, meta_header(v, raw.filename().string()));
        }
        return;
    case VolumeFormat::RawJson: {
        auto raw = path;
        raw.replace_extension(".raw");
        nlohmann::json j;
        j["dims"] = {v.dims().x, v.dims().y, v.dims().z};
        j["spacing"] = {v.spacing().x, v.spacing().y, v.spacing().z};
        j["origin"] = {v.origin().x, v.origin().y, v.origin().z};
        j["element_kind"] = to_string(v.kind());
        j["dtype"] = json_dtype_name(dtype_of<T>());
        j["endian"] = "little";
        j["data_file"] = raw.filename().string();
        write_file(raw, raw_bytes(v));
        write_file(sidecar_json(path), j.dump(2));
        return;
    }
    }
}

#define STENOVIZ_INSTANTIATE_IO(T)                                                       \
    template void write_volume<T>(const Volume<T>&, const fs::path&, VolumeFormat);  \
    template std::string serialize_volume<T>(const Volume<T>&, VolumeFormat);

STENOVIZ_INSTANTIATE_IO(std::uint8_t)
STENOVIZ_INSTANTIATE_IO(std::int16_t)
STENOVIZ_INSTANTIATE_IO(std::uint16_t)
STENOVIZ_INSTANTIATE_IO(std::int32_t)
STENOVIZ_INSTANTIATE_IO(float)
STENOVIZ_INSTANTIATE_IO(double)

#undef STENOVIZ_INSTANTIATE_IO

}  // namespace stenoviz
