#pragma once

#include "fei3d/matrix.hpp"
#include "fei3d/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fei3d::morphviz {

using Triangle = std::array<std::uint32_t, 3>;

/// Opaque extension block carried through load/save untouched.
struct ReservedBlock {
    std::uint32_t tag = 0;
    std::vector<std::uint8_t> payload;

    friend bool operator==(const ReservedBlock &, const ReservedBlock &) = default;
};

/// Linear identity + expression model. Basis rows are laid out
/// x0,y0,z0,x1,... so row 3v+k is coordinate k of vertex v.
struct MorphableAsset {
    Matrix mean;          // V x 3
    Matrix shape_basis;   // 3V x S
    Matrix expr_basis;    // 3V x E
    std::vector<Triangle> triangles;
    std::vector<ReservedBlock> reserved;

    [[nodiscard]] std::size_t vertex_count() const noexcept { return mean.rows(); }
    [[nodiscard]] std::size_t shape_count() const noexcept { return shape_basis.cols(); }
    [[nodiscard]] std::size_t expr_count() const noexcept { return expr_basis.cols(); }

    void validate() const;
};

struct MeshResult {
    Matrix vertices;  // V x 3
    std::vector<Triangle> triangles;
};

/// Binary container: magic "FEIMM\0", u16 version, u32 V, S, E, triangle
/// count and reserved-block count, then mean, shape basis, expression basis
/// (row-major f64), triangles (u32) and the reserved blocks (u32 tag, u64
/// length, bytes). Little-endian throughout.
std::vector<std::uint8_t> asset_bytes(const MorphableAsset &asset);
MorphableAsset parse_asset(const std::vector<std::uint8_t> &bytes);
MorphableAsset load_asset(const std::filesystem::path &path);
void save_asset(const MorphableAsset &asset, const std::filesystem::path &path);

/// vertices = mean + shape_basis·β + expr_basis·ψ; shorter vectors are
/// zero-padded, longer ones are a shape error.
MeshResult decode_mesh(const MorphableAsset &asset, std::span<const double> shape_params,
                       std::span<const double> expr_params);

/// "v x y z" lines (shortest round-trip doubles) then 1-indexed "f a b c".
std::string obj_text(const MeshResult &mesh);
void export_obj(const MeshResult &mesh, const std::filesystem::path &path);
MeshResult parse_obj(const std::string &text);

struct MeshParams {
    std::vector<double> shape;
    std::vector<double> expr;
};

/// Lines "shape,<v0>,<v1>,..." and "expr,<v0>,..."; either may be absent.
MeshParams parse_mesh_params(const std::string &text);

/// Random asset with a triangle fan over V vertices, for tests and demos.
MorphableAsset make_toy_asset(std::size_t vertices, std::size_t shape_count, std::size_t expr_count, Rng &rng);

}  // namespace fei3d::morphviz
