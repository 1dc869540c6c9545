#pragma once
// Training regimes: pretraining from scratch, transfer learning on a new
// cohort alone, and augmented transfer learning on the new cohort mixed with
// the original one. Also the cohort split and model evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "evaluation.hpp"
#include "model.hpp"
#include "nnet.hpp"
#include "tiling.hpp"
#include "volio.hpp"

namespace slant {

enum class MixMode { new_only, augmented };

struct TrainConfig {
    int epochs = 30;
    double lr = 1e-4;
    int folds = 5;
    std::array<double, 3> split{0.80, 0.10, 0.10};  // train, validation, test
    MixMode mix_mode = MixMode::new_only;
    double mix_ratio = 1.0;  // fraction of the original training split joined in augmented mode
    double ce_weight = 0.0;  // optional cross-entropy term added to the Dice loss
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        require(epochs >= 0, "epochs must be >= 0");
        require(folds >= 1, "folds must be >= 1");
        require(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
        for (double f : split) require(f >= 0.0, "split fractions must be non-negative");
        require(std::fabs(split[0] + split[1] + split[2] - 1.0) < 1e-9, "split fractions must sum to 1");
        require(mix_ratio >= 0.0 && mix_ratio <= 1.0, "mix_ratio must lie in [0, 1]");
        require(ce_weight >= 0.0 && std::isfinite(ce_weight), "ce_weight must be >= 0");
        if (folds > 1)
            require(std::fabs(split[1] + split[2] - 1.0 / folds) < 1e-9,
                    "with k folds the held-out fraction (validation + test) must equal 1/k");
    }
};

struct SplitAssignment {
    std::vector<std::string> train_ids;
    std::vector<std::string> validation_ids;
    std::vector<std::string> test_ids;
};

/// Seeded permutation of the ids cut into `folds` contiguous blocks. Block
/// `fold` is held out and halved into validation and test (odd element to
/// test); the other blocks train. The permutation depends only on the seed,
/// so test sets across folds partition the cohort. With a single fold the
/// split fractions are applied to the permutation directly.
inline SplitAssignment split_ids(std::vector<std::string> ids, int fold, const TrainConfig& config) {
    config.validate();
    const int n = static_cast<int>(ids.size());
    require(fold >= 0 && fold < config.folds, "fold index " + std::to_string(fold) + " out of range");
    require(n >= config.folds && n >= 2, "cohort of " + std::to_string(n) + " subjects is too small for " +
                                             std::to_string(config.folds) + " folds");
    Rng rng(mix_seed(config.seed, 0x53504C4954ULL));
    rng.shuffle(ids);

    std::size_t lo, hi;
    if (config.folds > 1) {
        lo = static_cast<std::size_t>(static_cast<long>(fold) * n / config.folds);
        hi = static_cast<std::size_t>(static_cast<long>(fold + 1) * n / config.folds);
    } else {
        const auto held = static_cast<std::size_t>(std::lround((config.split[1] + config.split[2]) * n));
        lo = static_cast<std::size_t>(n) - held;
        hi = static_cast<std::size_t>(n);
    }
    SplitAssignment s;
    const std::size_t n_val = (hi - lo) / 2;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i < lo || i >= hi)
            s.train_ids.push_back(ids[i]);
        else if (i < lo + n_val)
            s.validation_ids.push_back(ids[i]);
        else
            s.test_ids.push_back(ids[i]);
    }
    require(!s.train_ids.empty(), "split leaves no training subjects");
    return s;
}

inline SplitAssignment split_cohort(const CohortManifest& manifest, int fold, const TrainConfig& config) {
    manifest.validate();
    return split_ids(manifest.ids(), fold, config);
}

// ---------------------------------------------------------------------------
// In-memory cohorts

struct Subject {
    std::string id;
    Volume3D image;
    std::optional<Volume3D> post_image;
    std::optional<LabelMap> truth;
};

inline std::vector<Subject> load_subjects(const CohortManifest& manifest, const std::vector<LabelEntry>& vocabulary) {
    std::vector<Subject> out;
    for (const auto& r : manifest.subjects) {
        Subject s;
        s.id = r.subject_id;
        s.image = read_volume(r.image_path);
        if (r.paired_image_path) s.post_image = read_volume(*r.paired_image_path);
        if (r.label_path) s.truth = read_label_map(*r.label_path, vocabulary);
        if (s.truth && s.truth->dims != s.image.dims())
            fail(ErrorKind::invalid_argument, "subject " + s.id + ": label dims differ from image dims");
        if (s.post_image && s.post_image->dims() != s.image.dims())
            fail(ErrorKind::invalid_argument, "subject " + s.id + ": paired image dims differ from image dims");
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<const Subject*> select_subjects(const std::vector<Subject>& all, const std::vector<std::string>& ids) {
    std::vector<const Subject*> out;
    for (const auto& id : ids) {
        auto it = std::find_if(all.begin(), all.end(), [&](const Subject& s) { return s.id == id; });
        if (it == all.end()) fail(ErrorKind::invalid_argument, "unknown subject \"" + id + "\"");
        out.push_back(&*it);
    }
    return out;
}

/// One supervised pair: an image and the label map it should produce.
struct Example {
    std::string id;
    Volume3D image;
    LabelMap target;
};

inline std::vector<Example> examples_from(const std::vector<const Subject*>& subjects) {
    std::vector<Example> out;
    for (const auto* s : subjects) {
        if (!s->truth) fail(ErrorKind::invalid_argument, "subject " + s->id + " has no truth labels");
        out.push_back({s->id, s->image, *s->truth});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
    int fold = 0;
    std::string regime;
    int epoch = 0;
    double train_loss = 0.0;
    double val_dsc = 0.0;
};

namespace detail {

struct PreparedExample {
    std::string id;
    Dims3 dims{};
    Spacing3 spacing{};
    std::vector<float> normalized;
    LabelMap target;
    std::vector<Tensor<float>> tile_input;
    std::vector<Tensor<float>> tile_onehot;
};

inline PreparedExample prepare(const Example& e, const TrainedModel& model, bool with_tiles) {
    if (e.image.dims() != model.plan.volume_dims)
        fail(ErrorKind::invalid_argument, "subject " + e.id + " has dims " + dims_string(e.image.dims()) + ", plan expects " +
                                              dims_string(model.plan.volume_dims));
    PreparedExample p;
    p.id = e.id;
    p.dims = e.image.dims();
    p.spacing = e.image.voxel_size();
    p.normalized = zscore(e.image.data);
    p.target = e.target;
    if (!with_tiles) return p;
    const auto classes = labels_to_classes(e.target, model.classes);
    const Dims3& ts = model.plan.tile_shape;
    const std::vector<int> spatial{ts[2], ts[1], ts[0]};
    for (const auto& origin : model.plan.origins) {
        std::vector<float> tile;
        copy_block(p.normalized, p.dims, origin, ts, tile);
        p.tile_input.push_back(volume_tensor<float>(tile, ts));
        std::vector<std::int32_t> cls;
        copy_block(classes, p.dims, origin, ts, cls);
        p.tile_onehot.push_back(one_hot<float>(cls, model.config.num_classes, spatial));
    }
    return p;
}

inline LabelMap segment_normalized(const TrainedModel& model, const PreparedExample& e, unsigned threads) {
    std::vector<TilePrediction> preds(model.plan.size());
    parallel_for(model.plan.size(), threads, [&](std::size_t t) {
        const Dims3& origin = model.plan.origins[t];
        std::vector<float> tile;
        copy_block(e.normalized, e.dims, origin, model.plan.tile_shape, tile);
        const auto cls = predict_tile(model.tiles[t], model.config, tile, model.plan.tile_shape);
        LabelMap m(model.plan.tile_shape, e.spacing, model.classes);
        m.background_id = model.background_id();
        for (std::size_t i = 0; i < cls.size(); ++i) m.labels[i] = model.classes[static_cast<std::size_t>(cls[i])].id;
        preds[t] = {origin, std::move(m)};
    });
    return fuse_predictions(preds, model.plan);
}

inline double validation_dsc(const TrainedModel& model, const std::vector<PreparedExample>& val, unsigned threads) {
    double sum = 0.0;
    for (const auto& e : val) {
        const auto seg = segment_normalized(model, e, threads);
        sum += mean_dsc(dsc_per_label(seg, e.target), model.background_id());
    }
    return sum / static_cast<double>(val.size());
}

}  // namespace detail

/// Trains every tile network for `config.epochs` epochs over `train`
/// (reshuffled each epoch by a seeded permutation, one Adam step per subject
/// tile) and keeps the epoch with the highest mean validation DSC; ties keep
/// the earliest. Tile networks are independent and may train in parallel.
inline TrainedModel fit_model(TrainedModel model, const std::vector<Example>& train, const std::vector<Example>& val,
                              const TrainConfig& config, const std::string& log_regime = {}, int fold = 0,
                              std::vector<TrainLogRow>* log = nullptr) {
    config.validate();
    model.validate();
    model.validation_curve.clear();
    model.selected_epoch = 0;
    if (config.epochs == 0) return model;
    if (train.empty()) fail(ErrorKind::invalid_argument, "empty training set");
    if (val.empty()) fail(ErrorKind::invalid_argument, "empty validation set");

    std::vector<detail::PreparedExample> prepared_train, prepared_val;
    for (const auto& e : train) prepared_train.push_back(detail::prepare(e, model, true));
    for (const auto& e : val) prepared_val.push_back(detail::prepare(e, model, false));

    const std::size_t n_tiles = model.plan.size();
    std::vector<AdamState<float>> optim;
    for (const auto& p : model.tiles) optim.push_back(AdamState<float>::for_params(p, config.lr));

    TrainedModel best = model;
    double best_dsc = -1.0;
    const float smooth = static_cast<float>(model.config.dice_smooth);
    const float ce = static_cast<float>(config.ce_weight);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order(prepared_train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        std::vector<double> tile_loss(n_tiles, 0.0);
        parallel_for(n_tiles, config.threads, [&](std::size_t t) {
            DenormalGuard ftz;
            for (std::size_t idx : order) {
                const auto& ex = prepared_train[idx];
                auto cache = forward_tensor(ex.tile_input[t], model.tiles[t], model.config);
                auto loss = dice_loss(cache.probs, ex.tile_onehot[t], smooth, model.config.exclude_background);
                if (ce > 0.0f) {
                    const auto aux = cross_entropy_loss(cache.probs, ex.tile_onehot[t]);
                    loss.loss += ce * aux.loss;
                    for (std::size_t i = 0; i < loss.grad.size(); ++i) loss.grad[i] += ce * aux.grad[i];
                }
                if (!std::isfinite(loss.loss))
                    fail(ErrorKind::numeric, "non-finite loss at epoch " + std::to_string(epoch) + ", subject " + ex.id +
                                                 ", tile " + std::to_string(t));
                tile_loss[t] += loss.loss;
                const auto grads = backward(cache, loss.grad, model.tiles[t], model.config);
                adam_step(model.tiles[t], grads, optim[t]);
            }
        });
        double loss_sum = 0.0;
        for (double l : tile_loss) loss_sum += l;
        const double mean_loss = loss_sum / static_cast<double>(n_tiles * order.size());

        const double dsc = detail::validation_dsc(model, prepared_val, config.threads);
        model.validation_curve.push_back(dsc);
        if (dsc > best_dsc) {
            best_dsc = dsc;
            best.tiles = model.tiles;
            best.selected_epoch = epoch;
        }
        if (log) log->push_back({fold, log_regime, epoch, mean_loss, dsc});
    }
    best.validation_curve = model.validation_curve;
    return best;
}

/// Index of the largest value (1-based epoch), earliest on ties; 0 if empty.
inline int select_epoch(std::span<const double> curve) {
    int best = 0;
    for (std::size_t i = 0; i < curve.size(); ++i)
        if (best == 0 || curve[i] > curve[static_cast<std::size_t>(best - 1)]) best = static_cast<int>(i) + 1;
    return best;
}

inline TrainedModel pretrain(const std::vector<Example>& train, const std::vector<Example>& val, const TilePlan& plan,
                             const NetworkConfig& net_config, const std::vector<LabelEntry>& classes, const TrainConfig& config,
                             int fold = 0, std::vector<TrainLogRow>* log = nullptr) {
    if (train.empty()) fail(ErrorKind::invalid_argument, "pretraining needs a non-empty training set");
    TrainedModel init = init_model(net_config, plan, classes, mix_seed(config.seed, 0x494E4954ULL));
    TrainedModel m = fit_model(std::move(init), train, val, config, "pretrain", fold, log);
    m.regime = Regime::baseline;
    return m;
}

/// Continues training `base`. new_only trains on the new cohort's training
/// split; augmented adds the original cohort's training split (the first
/// mix_ratio share of it). Selection always uses the new cohort's validation
/// split; seeds, schedule and selection rule are identical across modes.
inline TrainedModel transfer_learn(const TrainedModel& base, const std::vector<Example>& new_train,
                                   const std::vector<Example>& new_val, const std::vector<Example>& original_train,
                                   const TrainConfig& config, int fold = 0, std::vector<TrainLogRow>* log = nullptr) {
    base.validate();
    const Regime regime = config.mix_mode == MixMode::augmented ? Regime::augmented : Regime::new_only;
    std::vector<Example> train = new_train;
    if (config.mix_mode == MixMode::augmented) {
        if (original_train.empty()) fail(ErrorKind::invalid_argument, "augmented transfer learning requires a non-empty original cohort");
        const auto take = static_cast<std::size_t>(std::lround(config.mix_ratio * static_cast<double>(original_train.size())));
        train.insert(train.end(), original_train.begin(), original_train.begin() + static_cast<std::ptrdiff_t>(take));
    }
    TrainedModel m = fit_model(base, train, new_val, config, regime_name(regime), fold, log);
    m.regime = regime;
    return m;
}

// ---------------------------------------------------------------------------
// Evaluation

using Segmenter = std::function<LabelMap(const Volume3D&)>;

/// pDSC of each subject's segmentation against its truth.
inline std::vector<DscRecord> evaluate_segmenter(const Segmenter& segment, const std::vector<const Subject*>& subjects,
                                                 DscKind kind = DscKind::pDSC) {
    std::vector<DscRecord> out;
    for (const auto* s : subjects) {
        if (!s->truth) fail(ErrorKind::invalid_argument, "subject " + s->id + " has no truth labels");
        out.push_back(make_dsc_record(s->id, segment(s->image), *s->truth, kind));
    }
    return out;
}

inline std::vector<DscRecord> evaluate_model(const TrainedModel& model, const std::vector<const Subject*>& subjects,
                                             unsigned threads = 1) {
    return evaluate_segmenter([&](const Volume3D& v) { return segment_volume(model, v, threads); }, subjects);
}

/// rDSC of each pair: segmentations of the pre and post images compared.
inline std::vector<DscRecord> evaluate_reproducibility(const Segmenter& segment, const std::vector<const Subject*>& subjects) {
    std::vector<DscRecord> out;
    for (const auto* s : subjects) {
        if (!s->post_image) fail(ErrorKind::invalid_argument, "subject " + s->id + " has no paired image");
        out.push_back(reproducibility_dsc(segment(s->image), segment(*s->post_image), s->id));
    }
    return out;
}

}  // namespace slant
