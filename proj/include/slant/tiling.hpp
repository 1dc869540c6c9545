#pragma once
// Overlapping tile decomposition and per-voxel majority-vote fusion.

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "common.hpp"
#include "volio.hpp"

namespace slant {

struct TilePlan {
    Dims3 volume_dims{1, 1, 1};
    Dims3 tiles_per_axis{1, 1, 1};
    Dims3 tile_shape{1, 1, 1};
    std::vector<Dims3> origins;  // lexicographic in (i0, i1, i2)

    std::size_t size() const { return origins.size(); }
    bool operator==(const TilePlan&) const = default;
};

/// Evenly spaced origins along one axis: round(i (D - t) / (k - 1)).
inline std::vector<int> axis_origins(int volume, int tiles, int tile) {
    require(tiles >= 1, "tiles per axis must be >= 1");
    require(tile >= 1, "tile extent must be >= 1");
    require(tile <= volume, "tile extent " + std::to_string(tile) + " exceeds volume extent " + std::to_string(volume));
    require(static_cast<long>(tiles) * tile >= volume,
            "coverage impossible: " + std::to_string(tiles) + " tiles of " + std::to_string(tile) + " cannot span " +
                std::to_string(volume));
    std::vector<int> o(static_cast<std::size_t>(tiles), 0);
    if (tiles == 1) return o;
    const double step = static_cast<double>(volume - tile) / static_cast<double>(tiles - 1);
    for (int i = 0; i < tiles; ++i) o[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(i * step));
    return o;
}

inline TilePlan plan_tiles(const Dims3& volume_dims, const Dims3& tiles_per_axis, const Dims3& tile_shape) {
    TilePlan plan{volume_dims, tiles_per_axis, tile_shape, {}};
    std::array<std::vector<int>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        require(volume_dims[a] >= 1, "volume dims must be positive");
        axis[a] = axis_origins(volume_dims[a], tiles_per_axis[a], tile_shape[a]);
    }
    for (int i0 : axis[0])
        for (int i1 : axis[1])
            for (int i2 : axis[2]) plan.origins.push_back({i0, i1, i2});
    return plan;
}

inline bool tile_fits(const Dims3& volume_dims, const Dims3& origin, const Dims3& shape) {
    for (int a = 0; a < 3; ++a)
        if (origin[a] < 0 || shape[a] < 1 || origin[a] + shape[a] > volume_dims[a]) return false;
    return true;
}

namespace detail {

template <class T>
void copy_block(const std::vector<T>& src, const Dims3& src_dims, const Dims3& origin, const Dims3& shape,
                std::vector<T>& dst) {
    dst.resize(voxel_count(shape));
    std::size_t k = 0;
    for (int z = 0; z < shape[2]; ++z)
        for (int y = 0; y < shape[1]; ++y) {
            const std::size_t row = flat_index(src_dims, origin[0], origin[1] + y, origin[2] + z);
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(row), shape[0], dst.begin() + static_cast<std::ptrdiff_t>(k));
            k += static_cast<std::size_t>(shape[0]);
        }
}

inline void check_tile(const Dims3& volume_dims, const Dims3& origin, const Dims3& shape) {
    if (!tile_fits(volume_dims, origin, shape))
        fail(ErrorKind::invalid_argument, "tile " + dims_string(shape) + " at (" + std::to_string(origin[0]) + "," +
                                              std::to_string(origin[1]) + "," + std::to_string(origin[2]) +
                                              ") lies outside volume " + dims_string(volume_dims));
}

}  // namespace detail

inline Volume3D extract_tile(const Volume3D& volume, const Dims3& origin, const Dims3& shape) {
    detail::check_tile(volume.dims(), origin, shape);
    Volume3D tile(shape, volume.voxel_size());
    tile.header.datatype = volume.header.datatype;
    tile.header.endianness = volume.header.endianness;
    detail::copy_block(volume.data, volume.dims(), origin, shape, tile.data);
    return tile;
}

inline LabelMap extract_tile(const LabelMap& map, const Dims3& origin, const Dims3& shape) {
    detail::check_tile(map.dims, origin, shape);
    LabelMap tile(shape, map.voxel_size, map.vocabulary);
    tile.background_id = map.background_id;
    detail::copy_block(map.labels, map.dims, origin, shape, tile.labels);
    return tile;
}

using TilePrediction = std::pair<Dims3, LabelMap>;

/// Per-voxel majority vote over every tile covering the voxel; ties go to the
/// smallest label id. Input order does not matter.
inline LabelMap fuse_predictions(const std::vector<TilePrediction>& tile_maps, const TilePlan& plan) {
    require(!plan.origins.empty(), "tile plan has no tiles");
    require(tile_maps.size() == plan.origins.size(), "expected " + std::to_string(plan.origins.size()) +
                                                         " tile maps, got " + std::to_string(tile_maps.size()));

    std::map<Dims3, int> expected;
    for (const auto& o : plan.origins) ++expected[o];
    for (const auto& [origin, map] : tile_maps) {
        auto it = expected.find(origin);
        if (it == expected.end() || it->second == 0)
            fail(ErrorKind::invalid_argument, "tile map at an origin not in the plan (or duplicated)");
        --it->second;
        if (map.dims != plan.tile_shape)
            fail(ErrorKind::invalid_argument, "tile map has shape " + dims_string(map.dims) + ", plan expects " +
                                                  dims_string(plan.tile_shape));
        if (map.labels.size() != voxel_count(map.dims)) fail(ErrorKind::invalid_argument, "tile map data length mismatch");
    }

    const LabelMap& first = tile_maps.front().second;
    std::vector<int> ids;
    for (const auto& [origin, map] : tile_maps)
        for (const auto& e : map.vocabulary) ids.push_back(e.id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    require(!ids.empty(), "tile maps carry an empty vocabulary");
    std::map<int, std::size_t> slot;
    for (std::size_t i = 0; i < ids.size(); ++i) slot[ids[i]] = i;

    const std::size_t n_labels = ids.size();
    const std::size_t n_voxels = voxel_count(plan.volume_dims);
    std::vector<std::uint32_t> votes(n_voxels * n_labels, 0);
    for (const auto& [origin, map] : tile_maps) {
        const Dims3& s = map.dims;
        std::size_t k = 0;
        for (int z = 0; z < s[2]; ++z)
            for (int y = 0; y < s[1]; ++y)
                for (int x = 0; x < s[0]; ++x, ++k) {
                    auto it = slot.find(map.labels[k]);
                    if (it == slot.end())
                        fail(ErrorKind::invalid_argument, "tile label " + std::to_string(map.labels[k]) + " is not in its vocabulary");
                    const std::size_t v = flat_index(plan.volume_dims, origin[0] + x, origin[1] + y, origin[2] + z);
                    ++votes[v * n_labels + it->second];
                }
    }

    LabelMap out(plan.volume_dims, first.voxel_size, first.vocabulary);
    out.background_id = first.background_id;
    if (out.vocabulary.size() != ids.size()) out.vocabulary = numbered_vocabulary(ids);
    for (std::size_t v = 0; v < n_voxels; ++v) {
        const std::uint32_t* row = &votes[v * n_labels];
        std::size_t best = 0;
        for (std::size_t l = 1; l < n_labels; ++l)
            if (row[l] > row[best]) best = l;
        if (row[best] == 0) fail(ErrorKind::invalid_argument, "voxel not covered by any tile");
        out.labels[v] = ids[best];
    }
    return out;
}

}  // namespace slant
