#pragma once
// Single-frame NIfTI-1 subset (uint8 / int16 / float32, either byte order)
// and cohort manifests.
//
// Header fields decoded, by byte offset:
//   0 sizeof_hdr:int32   40 dim:int16[8]   70 datatype:int16   72 bitpix:int16
//   76 pixdim:float32[8] 108 vox_offset:float32  112 scl_slope  116 scl_inter
//   344 magic:char[4]
// Orientation fields are not interpreted; volumes live in voxel space.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace slant {

inline constexpr std::size_t kNiftiHeaderSize = 348;

enum class Datatype { uint8, int16, float32 };
enum class Endianness { little, big };

inline int datatype_code(Datatype t) {
    switch (t) {
        case Datatype::uint8: return 2;
        case Datatype::int16: return 4;
        case Datatype::float32: return 16;
    }
    return 0;
}

inline int datatype_bytes(Datatype t) {
    switch (t) {
        case Datatype::uint8: return 1;
        case Datatype::int16: return 2;
        case Datatype::float32: return 4;
    }
    return 0;
}

inline const char* datatype_name(Datatype t) {
    switch (t) {
        case Datatype::uint8: return "uint8";
        case Datatype::int16: return "int16";
        case Datatype::float32: return "float32";
    }
    return "?";
}

inline std::optional<Datatype> datatype_from_code(int code) {
    switch (code) {
        case 2: return Datatype::uint8;
        case 4: return Datatype::int16;
        case 16: return Datatype::float32;
        default: return std::nullopt;
    }
}

struct VolumeHeader {
    Dims3 dims{1, 1, 1};
    Spacing3 voxel_size{1.0, 1.0, 1.0};
    Datatype datatype = Datatype::float32;
    std::size_t data_offset = kNiftiHeaderSize;
    Endianness endianness = Endianness::little;
    double scale_slope = 1.0;  // 0 on disk means "no scaling"
    double scale_intercept = 0.0;
    bool detached_payload = false;  // "ni1": payload lives in a separate .img file

    double effective_slope() const { return scale_slope == 0.0 ? 1.0 : scale_slope; }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            require(dims[a] >= 1, "volume dimension " + std::to_string(a) + " must be >= 1");
            require(voxel_size[a] > 0.0 && std::isfinite(voxel_size[a]),
                    "voxel size along axis " + std::to_string(a) + " must be positive");
        }
        require(data_offset >= kNiftiHeaderSize, "data offset must be >= 348");
    }
};

namespace detail {

inline bool host_is_little() {
    const std::uint16_t probe = 1;
    std::uint8_t first;
    std::memcpy(&first, &probe, 1);
    return first == 1;
}

template <class T>
T load(std::span<const std::uint8_t> bytes, std::size_t offset, Endianness order) {
    std::array<std::uint8_t, sizeof(T)> buf;
    std::memcpy(buf.data(), bytes.data() + offset, sizeof(T));
    if ((order == Endianness::little) != host_is_little()) std::reverse(buf.begin(), buf.end());
    T value;
    std::memcpy(&value, buf.data(), sizeof(T));
    return value;
}

template <class T>
void store(std::vector<std::uint8_t>& bytes, std::size_t offset, T value, Endianness order) {
    std::array<std::uint8_t, sizeof(T)> buf;
    std::memcpy(buf.data(), &value, sizeof(T));
    if ((order == Endianness::little) != host_is_little()) std::reverse(buf.begin(), buf.end());
    std::memcpy(bytes.data() + offset, buf.data(), sizeof(T));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorKind::io, "read error on " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "write error on " + path.string());
}

}  // namespace detail

inline VolumeHeader parse_header(std::span<const std::uint8_t> raw) {
    if (raw.size() < kNiftiHeaderSize)
        fail(ErrorKind::format, "header needs 348 bytes, got " + std::to_string(raw.size()));

    VolumeHeader h;
    if (detail::load<std::int32_t>(raw, 0, Endianness::little) == 348) {
        h.endianness = Endianness::little;
    } else if (detail::load<std::int32_t>(raw, 0, Endianness::big) == 348) {
        h.endianness = Endianness::big;
    } else {
        fail(ErrorKind::format, "sizeof_hdr is not 348 in either byte order");
    }
    const Endianness e = h.endianness;

    const char* magic = reinterpret_cast<const char*>(raw.data() + 344);
    const bool single_file = std::memcmp(magic, "n+1\0", 4) == 0;
    const bool pair_file = std::memcmp(magic, "ni1\0", 4) == 0;
    if (!single_file && !pair_file) fail(ErrorKind::format, "magic is neither \"n+1\" nor \"ni1\"");

    const int ndim = detail::load<std::int16_t>(raw, 40, e);
    if (ndim < 1 || ndim > 7) fail(ErrorKind::format, "dim[0] = " + std::to_string(ndim) + " is out of range");
    for (int a = 0; a < 3; ++a) {
        const int d = a < ndim ? detail::load<std::int16_t>(raw, 42 + 2 * a, e) : 1;
        if (d < 1) fail(ErrorKind::format, "non-positive dim[" + std::to_string(a + 1) + "] = " + std::to_string(d));
        h.dims[a] = d;
    }
    for (int a = 3; a < ndim; ++a) {
        const int d = detail::load<std::int16_t>(raw, 42 + 2 * a, e);
        if (d < 1) fail(ErrorKind::format, "non-positive dim[" + std::to_string(a + 1) + "]");
        if (d != 1) fail(ErrorKind::format, "multi-frame volumes are not supported");
    }

    const int code = detail::load<std::int16_t>(raw, 70, e);
    const auto type = datatype_from_code(code);
    if (!type) fail(ErrorKind::format, "unsupported datatype code " + std::to_string(code));
    h.datatype = *type;
    const int bitpix = detail::load<std::int16_t>(raw, 72, e);
    if (bitpix != 8 * datatype_bytes(h.datatype))
        fail(ErrorKind::format, "bitpix " + std::to_string(bitpix) + " disagrees with datatype " + datatype_name(h.datatype));

    for (int a = 0; a < 3; ++a) {
        const double p = std::fabs(static_cast<double>(detail::load<float>(raw, 80 + 4 * a, e)));
        if (!(p > 0.0) || !std::isfinite(p)) fail(ErrorKind::format, "pixdim[" + std::to_string(a + 1) + "] must be positive");
        h.voxel_size[a] = p;
    }

    const float vox_offset = detail::load<float>(raw, 108, e);
    if (single_file) {
        if (!(vox_offset >= 348.0f) || !std::isfinite(vox_offset))
            fail(ErrorKind::format, "vox_offset must be >= 348 for single-file NIfTI");
        h.data_offset = static_cast<std::size_t>(vox_offset);
    } else {
        h.data_offset = kNiftiHeaderSize;
        h.detached_payload = true;
    }

    const float slope = detail::load<float>(raw, 112, e);
    const float inter = detail::load<float>(raw, 116, e);
    h.scale_slope = std::isfinite(slope) ? slope : 0.0;
    h.scale_intercept = std::isfinite(inter) ? inter : 0.0;
    return h;
}

/// Encodes a 348-byte header in the header's own byte order.
inline std::vector<std::uint8_t> encode_header(const VolumeHeader& h) {
    h.validate();
    std::vector<std::uint8_t> raw(kNiftiHeaderSize, 0);
    const Endianness e = h.endianness;
    detail::store<std::int32_t>(raw, 0, 348, e);
    raw[38] = 'r';  // "regular"
    detail::store<std::int16_t>(raw, 40, 3, e);
    for (int a = 0; a < 3; ++a) {
        require(h.dims[a] <= std::numeric_limits<std::int16_t>::max(), "dimension too large for NIfTI-1");
        detail::store<std::int16_t>(raw, 42 + 2 * a, static_cast<std::int16_t>(h.dims[a]), e);
    }
    for (int a = 3; a < 7; ++a) detail::store<std::int16_t>(raw, 42 + 2 * a, 1, e);
    detail::store<std::int16_t>(raw, 70, static_cast<std::int16_t>(datatype_code(h.datatype)), e);
    detail::store<std::int16_t>(raw, 72, static_cast<std::int16_t>(8 * datatype_bytes(h.datatype)), e);
    detail::store<float>(raw, 76, 1.0f, e);
    for (int a = 0; a < 3; ++a) detail::store<float>(raw, 80 + 4 * a, static_cast<float>(h.voxel_size[a]), e);
    detail::store<float>(raw, 108, static_cast<float>(h.data_offset), e);
    detail::store<float>(raw, 112, static_cast<float>(h.scale_slope), e);
    detail::store<float>(raw, 116, static_cast<float>(h.scale_intercept), e);
    std::memcpy(raw.data() + 344, "n+1\0", 4);
    return raw;
}

struct Volume3D {
    VolumeHeader header;
    std::vector<float> data;

    Volume3D() : data(1, 0.0f) {}
    Volume3D(const Dims3& dims, const Spacing3& voxel_size, float fill = 0.0f) {
        header.dims = dims;
        header.voxel_size = voxel_size;
        header.validate();
        data.assign(voxel_count(dims), fill);
    }

    const Dims3& dims() const { return header.dims; }
    const Spacing3& voxel_size() const { return header.voxel_size; }

    float& at(int x, int y, int z) { return data[flat_index(header.dims, x, y, z)]; }
    float at(int x, int y, int z) const { return data[flat_index(header.dims, x, y, z)]; }

    void validate() const {
        header.validate();
        require(data.size() == voxel_count(header.dims), "volume data length does not match dims");
        for (float v : data) require(std::isfinite(v), "volume contains a non-finite value");
    }
};

/// Geometry and voxel values equal; float data compared bit for bit.
inline bool same_volume(const Volume3D& a, const Volume3D& b) {
    if (a.dims() != b.dims() || a.data.size() != b.data.size()) return false;
    for (int i = 0; i < 3; ++i)
        if (static_cast<float>(a.voxel_size()[i]) != static_cast<float>(b.voxel_size()[i])) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

namespace detail {

/// Stored (unscaled) payload values in double precision.
inline std::vector<double> decode_payload(std::span<const std::uint8_t> raw, const VolumeHeader& h) {
    if (h.detached_payload) fail(ErrorKind::format, "two-file (ni1) NIfTI pairs are not supported");
    const std::size_t n = voxel_count(h.dims);
    const std::size_t bytes = n * static_cast<std::size_t>(datatype_bytes(h.datatype));
    if (raw.size() < h.data_offset + bytes)
        fail(ErrorKind::format, "payload truncated: need " + std::to_string(h.data_offset + bytes) + " bytes, file has " +
                                    std::to_string(raw.size()));
    std::vector<double> out(n);
    const std::size_t base = h.data_offset;
    switch (h.datatype) {
        case Datatype::uint8:
            for (std::size_t i = 0; i < n; ++i) out[i] = raw[base + i];
            break;
        case Datatype::int16:
            for (std::size_t i = 0; i < n; ++i) out[i] = load<std::int16_t>(raw, base + 2 * i, h.endianness);
            break;
        case Datatype::float32:
            for (std::size_t i = 0; i < n; ++i) out[i] = load<float>(raw, base + 4 * i, h.endianness);
            break;
    }
    return out;
}

}  // namespace detail

inline Volume3D decode_volume(std::span<const std::uint8_t> raw) {
    Volume3D v;
    v.header = parse_header(raw);
    const VolumeHeader& h = v.header;
    if (h.detached_payload) fail(ErrorKind::format, "two-file (ni1) NIfTI pairs are not supported");
    const std::size_t n = voxel_count(h.dims);
    v.data.resize(n);
    const std::size_t bytes = n * static_cast<std::size_t>(datatype_bytes(h.datatype));
    if (raw.size() < h.data_offset + bytes)
        fail(ErrorKind::format, "payload truncated: need " + std::to_string(h.data_offset + bytes) + " bytes, file has " +
                                    std::to_string(raw.size()));
    const double slope = h.effective_slope();
    const double inter = h.scale_intercept;
    const bool identity = slope == 1.0 && inter == 0.0;
    if (h.datatype == Datatype::float32 && identity) {
        for (std::size_t i = 0; i < n; ++i) v.data[i] = detail::load<float>(raw, h.data_offset + 4 * i, h.endianness);
    } else {
        const auto stored = detail::decode_payload(raw, h);
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(stored[i] * slope + inter);
    }
    for (float x : v.data)
        if (!std::isfinite(x)) fail(ErrorKind::format, "volume contains a non-finite voxel value");
    return v;
}

inline Volume3D read_volume(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return decode_volume(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

/// Serialises using the header's datatype and byte order. Float payloads are
/// written raw with unit scaling; integer payloads are quantised through the
/// header's slope/intercept and must be exactly representable.
inline std::vector<std::uint8_t> encode_volume(const Volume3D& v) {
    v.validate();
    VolumeHeader h = v.header;
    if (h.datatype == Datatype::float32) {
        h.scale_slope = 1.0;
        h.scale_intercept = 0.0;
    }
    std::vector<std::uint8_t> out = encode_header(h);
    const std::size_t n = v.data.size();
    out.resize(h.data_offset + n * static_cast<std::size_t>(datatype_bytes(h.datatype)), 0);
    const double slope = h.effective_slope();
    const double inter = h.scale_intercept;
    auto quantise = [&](float value, double lo, double hi) {
        const double stored = std::round((static_cast<double>(value) - inter) / slope);
        if (stored < lo || stored > hi)
            fail(ErrorKind::invalid_argument, std::string("value out of range for ") + datatype_name(h.datatype));
        return stored;
    };
    switch (h.datatype) {
        case Datatype::uint8:
            for (std::size_t i = 0; i < n; ++i) out[h.data_offset + i] = static_cast<std::uint8_t>(quantise(v.data[i], 0, 255));
            break;
        case Datatype::int16:
            for (std::size_t i = 0; i < n; ++i)
                detail::store<std::int16_t>(out, h.data_offset + 2 * i,
                                            static_cast<std::int16_t>(quantise(v.data[i], -32768, 32767)), h.endianness);
            break;
        case Datatype::float32:
            for (std::size_t i = 0; i < n; ++i) detail::store<float>(out, h.data_offset + 4 * i, v.data[i], h.endianness);
            break;
    }
    return out;
}

inline void write_volume(const Volume3D& v, const std::filesystem::path& path) {
    const auto bytes = encode_volume(v);
    detail::write_file(path, bytes);
}

// ---------------------------------------------------------------------------
// Label maps

struct LabelEntry {
    int id = 0;
    std::string name;
    bool operator==(const LabelEntry&) const = default;
};

struct LabelMap {
    Dims3 dims{1, 1, 1};
    Spacing3 voxel_size{1.0, 1.0, 1.0};
    std::vector<std::int32_t> labels;
    std::vector<LabelEntry> vocabulary;
    int background_id = 0;

    LabelMap() : labels(1, 0) {}
    LabelMap(const Dims3& d, const Spacing3& spacing, std::vector<LabelEntry> vocab, std::int32_t fill = 0)
        : dims(d), voxel_size(spacing), labels(voxel_count(d), fill), vocabulary(std::move(vocab)) {}

    std::int32_t& at(int x, int y, int z) { return labels[flat_index(dims, x, y, z)]; }
    std::int32_t at(int x, int y, int z) const { return labels[flat_index(dims, x, y, z)]; }

    bool has_label(int id) const {
        return std::any_of(vocabulary.begin(), vocabulary.end(), [id](const LabelEntry& e) { return e.id == id; });
    }

    std::vector<int> label_ids() const {
        std::vector<int> ids;
        for (const auto& e : vocabulary) ids.push_back(e.id);
        return ids;
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            require(dims[a] >= 1, "label map dimension must be >= 1");
            require(voxel_size[a] > 0.0, "label map voxel size must be positive");
        }
        require(labels.size() == voxel_count(dims), "label data length does not match dims");
        std::unordered_set<int> known;
        for (const auto& e : vocabulary) {
            require(e.id >= 0, "label ids must be non-negative");
            require(known.insert(e.id).second, "duplicate label id " + std::to_string(e.id) + " in vocabulary");
        }
        for (auto l : labels)
            if (!known.count(l)) fail(ErrorKind::invalid_argument, "voxel label " + std::to_string(l) + " is not in the vocabulary");
    }

    bool operator==(const LabelMap& o) const {
        return dims == o.dims && labels == o.labels && vocabulary == o.vocabulary && background_id == o.background_id;
    }
};

inline std::vector<LabelEntry> numbered_vocabulary(std::span<const int> ids) {
    std::vector<LabelEntry> v;
    for (int id : ids) v.push_back({id, "label_" + std::to_string(id)});
    return v;
}

/// Decodes an integer-typed volume as labels. An empty vocabulary is inferred
/// from the distinct values present.
inline LabelMap decode_label_map(std::span<const std::uint8_t> raw, std::vector<LabelEntry> vocabulary = {}) {
    const VolumeHeader h = parse_header(raw);
    if (h.datatype == Datatype::float32) fail(ErrorKind::format, "label maps require an integer datatype");
    const auto stored = detail::decode_payload(raw, h);
    LabelMap m;
    m.dims = h.dims;
    m.voxel_size = h.voxel_size;
    m.labels.resize(stored.size());
    const double slope = h.effective_slope();
    std::set<int> present;
    for (std::size_t i = 0; i < stored.size(); ++i) {
        const double value = stored[i] * slope + h.scale_intercept;
        if (value != std::round(value) || value < 0)
            fail(ErrorKind::format, "label value " + std::to_string(value) + " is not a non-negative integer");
        m.labels[i] = static_cast<std::int32_t>(value);
        present.insert(m.labels[i]);
    }
    if (vocabulary.empty()) {
        std::vector<int> ids(present.begin(), present.end());
        if (std::find(ids.begin(), ids.end(), 0) == ids.end()) ids.insert(ids.begin(), 0);
        vocabulary = numbered_vocabulary(ids);
    }
    m.vocabulary = std::move(vocabulary);
    m.validate();
    return m;
}

inline LabelMap read_label_map(const std::filesystem::path& path, std::vector<LabelEntry> vocabulary = {}) {
    const auto bytes = detail::read_file(path);
    try {
        return decode_label_map(bytes, std::move(vocabulary));
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

inline std::vector<std::uint8_t> encode_label_map(const LabelMap& m, Endianness order = Endianness::little) {
    m.validate();
    const auto [lo, hi] = std::minmax_element(m.labels.begin(), m.labels.end());
    Volume3D v(m.dims, m.voxel_size);
    v.header.endianness = order;
    if (*hi <= 255) {
        v.header.datatype = Datatype::uint8;
    } else if (*hi <= 32767 && *lo >= 0) {
        v.header.datatype = Datatype::int16;
    } else {
        fail(ErrorKind::invalid_argument, "label ids exceed the int16 range");
    }
    for (std::size_t i = 0; i < m.labels.size(); ++i) v.data[i] = static_cast<float>(m.labels[i]);
    return encode_volume(v);
}

inline void write_label_map(const LabelMap& m, const std::filesystem::path& path) {
    detail::write_file(path, encode_label_map(m));
}

// ---------------------------------------------------------------------------
// Cohort manifests

enum class CohortTag { original, new_cohort, contrast_pair };

inline const char* cohort_tag_name(CohortTag t) {
    switch (t) {
        case CohortTag::original: return "original";
        case CohortTag::new_cohort: return "new";
        case CohortTag::contrast_pair: return "contrast_pair";
    }
    return "?";
}

inline CohortTag parse_cohort_tag(const std::string& s) {
    if (s == "original") return CohortTag::original;
    if (s == "new") return CohortTag::new_cohort;
    if (s == "contrast_pair") return CohortTag::contrast_pair;
    fail(ErrorKind::invalid_argument, "unknown cohort tag \"" + s + "\"");
}

struct SubjectRecord {
    std::string subject_id;
    std::string image_path;
    std::optional<std::string> label_path;
    std::optional<std::string> paired_image_path;
    CohortTag cohort = CohortTag::original;
};

struct CohortManifest {
    std::vector<SubjectRecord> subjects;

    void validate() const {
        std::unordered_set<std::string> seen;
        for (const auto& s : subjects) {
            if (!seen.insert(s.subject_id).second)
                fail(ErrorKind::invalid_argument, "duplicate subject id \"" + s.subject_id + "\"");
            if (s.cohort == CohortTag::contrast_pair && !s.paired_image_path)
                fail(ErrorKind::invalid_argument, "contrast_pair subject \"" + s.subject_id + "\" has no paired_image");
        }
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        for (const auto& s : subjects) out.push_back(s.subject_id);
        return out;
    }

    const SubjectRecord& find(const std::string& id) const {
        for (const auto& s : subjects)
            if (s.subject_id == id) return s;
        fail(ErrorKind::invalid_argument, "no subject \"" + id + "\" in manifest");
    }
};

/// Relative paths in the document resolve against `base_dir`.
inline CohortManifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    if (!doc.is_object() || !doc.contains("subjects") || !doc["subjects"].is_array())
        fail(ErrorKind::invalid_argument, "manifest must be an object with a \"subjects\" array");
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return (path.is_absolute() || base_dir.empty()) ? path.string() : (base_dir / path).lexically_normal().string();
    };
    CohortManifest m;
    for (const auto& s : doc["subjects"]) {
        SubjectRecord r;
        try {
            r.subject_id = s.at("id").get<std::string>();
            r.image_path = resolve(s.at("image").get<std::string>());
            if (s.contains("labels") && !s["labels"].is_null()) r.label_path = resolve(s["labels"].get<std::string>());
            if (s.contains("paired_image") && !s["paired_image"].is_null())
                r.paired_image_path = resolve(s["paired_image"].get<std::string>());
            r.cohort = parse_cohort_tag(s.at("cohort").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::invalid_argument, std::string("malformed manifest entry: ") + e.what());
        }
        m.subjects.push_back(std::move(r));
    }
    m.validate();
    return m;
}

inline CohortManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, path.string() + ": " + e.what());
    }
    return parse_manifest(doc, path.parent_path());
}

/// Paths inside `base_dir` are written relative to it.
inline nlohmann::json manifest_to_json(const CohortManifest& m, const std::filesystem::path& base_dir = {}) {
    auto rel = [&](const std::string& p) {
        if (base_dir.empty()) return p;
        const auto r = std::filesystem::path(p).lexically_relative(base_dir);
        return (r.empty() || *r.begin() == "..") ? p : r.string();
    };
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& s : m.subjects) {
        nlohmann::json e;
        e["id"] = s.subject_id;
        e["image"] = rel(s.image_path);
        e["labels"] = s.label_path ? nlohmann::json(rel(*s.label_path)) : nlohmann::json(nullptr);
        e["paired_image"] = s.paired_image_path ? nlohmann::json(rel(*s.paired_image_path)) : nlohmann::json(nullptr);
        e["cohort"] = cohort_tag_name(s.cohort);
        subjects.push_back(std::move(e));
    }
    return nlohmann::json{{"subjects", subjects}};
}

inline void save_manifest(const CohortManifest& m, const std::filesystem::path& path) {
    m.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write manifest " + path.string());
    out << manifest_to_json(m, path.parent_path()).dump(2) << '\n';
    if (!out) fail(ErrorKind::io, "write error on " + path.string());
}

}  // namespace slant
