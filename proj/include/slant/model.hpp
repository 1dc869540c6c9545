#pragma once
// A tiled segmentation model: one network per tile of a TilePlan, fused by
// majority vote. Also the TBNN checkpoint container.
//
// TBNN layout (all little-endian):
//   "TBNN" u32 version
//   config:  u32 in_channels, hidden_channels, hidden_layers, num_classes, kernel, exclude_background
//   labels:  u32 count, then per class {i32 id, u32 name_len, name bytes}
//   plan:    i32 volume_dims[3], tiles_per_axis[3], tile_shape[3]
//   meta:    u32 regime, i32 selected_epoch, u32 curve_len, f32 curve[curve_len]
//   models:  u32 count, then per model {u64 init_seed, u32 tensor_count,
//            per tensor {u32 rank, u32 dims[rank], f32 data[]}}

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "common.hpp"
#include "nnet.hpp"
#include "tiling.hpp"
#include "volio.hpp"

namespace slant {

enum class Regime { baseline, new_only, augmented };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::baseline: return "baseline";
        case Regime::new_only: return "new_only";
        case Regime::augmented: return "augmented";
    }
    return "?";
}

inline Regime parse_regime(const std::string& s) {
    if (s == "baseline") return Regime::baseline;
    if (s == "new_only") return Regime::new_only;
    if (s == "augmented") return Regime::augmented;
    fail(ErrorKind::invalid_argument, "unknown regime \"" + s + "\"");
}

struct TrainedModel {
    NetworkConfig config;
    TilePlan plan;
    std::vector<LabelEntry> classes;  // class index -> label
    std::vector<ModelParams<float>> tiles;
    int selected_epoch = 0;
    std::vector<double> validation_curve;
    Regime regime = Regime::baseline;

    void validate() const {
        config.validate();
        require(classes.size() == static_cast<std::size_t>(config.num_classes), "class table size differs from num_classes");
        require(tiles.size() == plan.size(), "model has " + std::to_string(tiles.size()) + " tile networks for a plan of " +
                                                 std::to_string(plan.size()) + " tiles");
        for (const auto& t : tiles) check_params(t, config);
    }

    int background_id() const { return classes.empty() ? 0 : classes.front().id; }
};

/// Maps label ids to class indices (vocabulary order).
inline std::vector<std::int32_t> labels_to_classes(const LabelMap& m, const std::vector<LabelEntry>& classes) {
    std::vector<std::int32_t> out(m.labels.size());
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        std::int32_t k = -1;
        for (std::size_t c = 0; c < classes.size(); ++c)
            if (classes[c].id == m.labels[i]) {
                k = static_cast<std::int32_t>(c);
                break;
            }
        if (k < 0) fail(ErrorKind::invalid_argument, "label " + std::to_string(m.labels[i]) + " is not a model class");
        out[i] = k;
    }
    return out;
}

inline TrainedModel init_model(const NetworkConfig& config, const TilePlan& plan, std::vector<LabelEntry> classes,
                               std::uint64_t seed) {
    TrainedModel m;
    m.config = config;
    m.config.num_classes = static_cast<int>(classes.size());
    m.plan = plan;
    m.classes = std::move(classes);
    for (std::size_t t = 0; t < plan.size(); ++t) m.tiles.push_back(init_params<float>(m.config, mix_seed(seed, t)));
    m.validate();
    return m;
}

/// Class map for one tile from already-normalised tile voxels.
inline std::vector<std::int32_t> predict_tile(const ModelParams<float>& params, const NetworkConfig& config,
                                              std::span<const float> normalized_tile, const Dims3& tile_shape) {
    DenormalGuard ftz;
    const auto cache = forward_tensor(volume_tensor<float>(normalized_tile, tile_shape), params, config);
    return argmax_channels(cache.probs);
}

/// Whole-volume z-score, per-tile inference, majority-vote fusion.
inline LabelMap segment_volume(const TrainedModel& model, const Volume3D& image, unsigned threads = 1) {
    if (image.dims() != model.plan.volume_dims)
        fail(ErrorKind::invalid_argument, "image dims " + dims_string(image.dims()) + " do not match the model's expected dims " +
                                              dims_string(model.plan.volume_dims));
    model.validate();
    const auto normalized = zscore(image.data);
    std::vector<TilePrediction> preds(model.plan.size());
    parallel_for(model.plan.size(), threads, [&](std::size_t t) {
        const Dims3& origin = model.plan.origins[t];
        std::vector<float> tile;
        detail::copy_block(normalized, image.dims(), origin, model.plan.tile_shape, tile);
        const auto cls = predict_tile(model.tiles[t], model.config, tile, model.plan.tile_shape);
        LabelMap m(model.plan.tile_shape, image.voxel_size(), model.classes);
        m.background_id = model.background_id();
        for (std::size_t i = 0; i < cls.size(); ++i) m.labels[i] = model.classes[static_cast<std::size_t>(cls[i])].id;
        preds[t] = {origin, std::move(m)};
    });
    return fuse_predictions(preds, model.plan);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        const std::size_t at = bytes.size();
        bytes.resize(at + sizeof(T));
        store<T>(bytes, at, v, Endianness::little);
    }
    void put_raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
    std::vector<std::uint8_t> bytes;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}
    template <class T>
    T get() {
        need(sizeof(T));
        const T v = load<T>(bytes_, pos_, Endianness::little);
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) fail(ErrorKind::format, "checkpoint truncated");
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& m) {
    m.validate();
    detail::ByteWriter w;
    w.put_raw("TBNN", 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.config.in_channels));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.config.hidden_channels));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.config.hidden_layers));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.config.num_classes));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.config.kernel));
    w.put<std::uint32_t>(m.config.exclude_background ? 1u : 0u);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.classes.size()));
    for (const auto& c : m.classes) {
        w.put<std::int32_t>(c.id);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(c.name.size()));
        w.put_raw(c.name.data(), c.name.size());
    }
    for (const Dims3* d : {&m.plan.volume_dims, &m.plan.tiles_per_axis, &m.plan.tile_shape})
        for (int v : *d) w.put<std::int32_t>(v);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.regime));
    w.put<std::int32_t>(m.selected_epoch);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.validation_curve.size()));
    for (double v : m.validation_curve) w.put<float>(static_cast<float>(v));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.tiles.size()));
    for (const auto& p : m.tiles) {
        w.put<std::uint64_t>(p.init_seed);
        const auto ts = p.tensors();
        w.put<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
        for (const auto* t : ts) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(t->shape.size()));
            for (int d : t->shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
            for (float v : t->data) w.put<float>(v);
        }
    }
    return std::move(w.bytes);
}

inline TrainedModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (r.get_string(4) != "TBNN") fail(ErrorKind::format, "not a TBNN checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) fail(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version));
    TrainedModel m;
    m.config.in_channels = static_cast<int>(r.get<std::uint32_t>());
    m.config.hidden_channels = static_cast<int>(r.get<std::uint32_t>());
    m.config.hidden_layers = static_cast<int>(r.get<std::uint32_t>());
    m.config.num_classes = static_cast<int>(r.get<std::uint32_t>());
    m.config.kernel = static_cast<int>(r.get<std::uint32_t>());
    m.config.exclude_background = r.get<std::uint32_t>() != 0;
    const auto n_classes = r.get<std::uint32_t>();
    if (n_classes > 65536) fail(ErrorKind::format, "implausible class count in checkpoint");
    for (std::uint32_t i = 0; i < n_classes; ++i) {
        LabelEntry e;
        e.id = r.get<std::int32_t>();
        e.name = r.get_string(r.get<std::uint32_t>());
        m.classes.push_back(std::move(e));
    }
    Dims3 vol{}, per_axis{}, shape{};
    for (Dims3* d : {&vol, &per_axis, &shape})
        for (int& v : *d) v = r.get<std::int32_t>();
    try {
        m.plan = plan_tiles(vol, per_axis, shape);
    } catch (const Error& e) {
        fail(ErrorKind::format, std::string("checkpoint tile plan is invalid: ") + e.what());
    }
    const auto regime = r.get<std::uint32_t>();
    if (regime > 2) fail(ErrorKind::format, "unknown regime tag in checkpoint");
    m.regime = static_cast<Regime>(regime);
    m.selected_epoch = r.get<std::int32_t>();
    const auto curve_len = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < curve_len; ++i) m.validation_curve.push_back(r.get<float>());
    const auto n_models = r.get<std::uint32_t>();
    if (n_models != m.plan.size()) fail(ErrorKind::format, "checkpoint tile count does not match its plan");
    for (std::uint32_t k = 0; k < n_models; ++k) {
        ModelParams<float> p;
        p.init_seed = r.get<std::uint64_t>();
        const auto n_tensors = r.get<std::uint32_t>();
        if (n_tensors % 2 != 0) fail(ErrorKind::format, "checkpoint tensor count must be even");
        for (std::uint32_t t = 0; t < n_tensors; ++t) {
            const auto rank = r.get<std::uint32_t>();
            if (rank == 0 || rank > 8) fail(ErrorKind::format, "bad tensor rank in checkpoint");
            std::vector<int> s;
            for (std::uint32_t i = 0; i < rank; ++i) s.push_back(static_cast<int>(r.get<std::uint32_t>()));
            Tensor<float> tensor(s);
            for (auto& v : tensor.data) v = r.get<float>();
            (t % 2 == 0 ? p.weights : p.biases).push_back(std::move(tensor));
        }
        m.tiles.push_back(std::move(p));
    }
    if (!r.done()) fail(ErrorKind::format, "trailing bytes after checkpoint payload");
    try {
        m.validate();
    } catch (const Error& e) {
        fail(ErrorKind::format, std::string("inconsistent checkpoint: ") + e.what());
    }
    return m;
}

inline void save_checkpoint(const TrainedModel& m, const std::filesystem::path& path) {
    detail::write_file(path, encode_checkpoint(m));
}

inline TrainedModel load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

}  // namespace slant
