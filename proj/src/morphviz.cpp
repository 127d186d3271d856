#include "fei3d/morphviz.hpp"

#include "fei3d/binary_io.hpp"
#include "fei3d/checkpoint.hpp"
#include "fei3d/error.hpp"
#include "fei3d/text_io.hpp"

#include <cmath>

namespace fei3d::morphviz {

namespace {

constexpr std::string_view asset_magic{"FEIMM\0", 6};
constexpr std::uint16_t asset_version = 1;

void write_matrix(binary::Writer &w, const Matrix &m) {
    for (double v : m.values()) {
        w.f64(v);
    }
}

Matrix read_matrix(binary::Reader &r, std::size_t rows, std::size_t cols, const char *field) {
    if (cols != 0 && rows > r.remaining() / 8 / cols) {
        r.fail(std::string(field) + " needs " + std::to_string(rows * cols * 8) + " bytes, " +
               std::to_string(r.remaining()) + " left");
    }
    Matrix m(rows, cols);
    for (double &v : m.values()) {
        v = r.f64(field);
    }
    return m;
}

}  // namespace

void MorphableAsset::validate() const {
    const std::size_t v = vertex_count();
    if (mean.cols() != 3 || v == 0) {
        throw Error(ErrorKind::format, "mean: expected Vx3 with V >= 1, got " + mean.shape_string());
    }
    if (shape_basis.rows() != 3 * v) {
        throw Error(ErrorKind::format, "shape_basis: " + std::to_string(shape_basis.rows()) + " rows, expected 3V = " +
                                           std::to_string(3 * v));
    }
    if (expr_basis.rows() != 3 * v) {
        throw Error(ErrorKind::format, "expr_basis: " + std::to_string(expr_basis.rows()) + " rows, expected 3V = " +
                                           std::to_string(3 * v));
    }
    for (const auto &[name, m] : {std::pair<const char *, const Matrix *>{"mean", &mean},
                                  {"shape_basis", &shape_basis},
                                  {"expr_basis", &expr_basis}}) {
        if (!m->all_finite()) {
            throw Error(ErrorKind::format, std::string(name) + ": non-finite value");
        }
    }
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        for (auto idx : triangles[t]) {
            if (idx >= v) {
                throw Error(ErrorKind::format, "triangles[" + std::to_string(t) + "]: vertex index " +
                                                   std::to_string(idx) + " >= V = " + std::to_string(v));
            }
        }
    }
}

std::vector<std::uint8_t> asset_bytes(const MorphableAsset &asset) {
    asset.validate();
    binary::Writer w;
    w.bytes(asset_magic);
    w.uint<std::uint16_t>(asset_version);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(asset.vertex_count()));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(asset.shape_count()));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(asset.expr_count()));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(asset.triangles.size()));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(asset.reserved.size()));
    write_matrix(w, asset.mean);
    write_matrix(w, asset.shape_basis);
    write_matrix(w, asset.expr_basis);
    for (const auto &t : asset.triangles) {
        for (auto idx : t) {
            w.uint<std::uint32_t>(idx);
        }
    }
    for (const auto &block : asset.reserved) {
        w.uint<std::uint32_t>(block.tag);
        w.uint<std::uint64_t>(block.payload.size());
        w.bytes(std::string_view(reinterpret_cast<const char *>(block.payload.data()), block.payload.size()));
    }
    return w.take();
}

MorphableAsset parse_asset(const std::vector<std::uint8_t> &bytes) {
    binary::Reader r(bytes, "morphable asset");
    if (r.bytes(asset_magic.size(), "magic") != asset_magic) {
        throw Error(ErrorKind::format, "morphable asset at byte offset 0: bad magic (expected \"FEIMM\\0\")");
    }
    const auto version = r.uint<std::uint16_t>("version");
    if (version != asset_version) {
        r.fail("unsupported asset version " + std::to_string(version) + " (supported: " +
               std::to_string(asset_version) + ")");
    }
    const std::size_t v = r.uint<std::uint32_t>("vertex count");
    const std::size_t s = r.uint<std::uint32_t>("shape count");
    const std::size_t e = r.uint<std::uint32_t>("expression count");
    const std::size_t t = r.uint<std::uint32_t>("triangle count");
    const std::size_t reserved = r.uint<std::uint32_t>("reserved block count");

    MorphableAsset asset;
    asset.mean = read_matrix(r, v, 3, "mean");
    asset.shape_basis = read_matrix(r, 3 * v, s, "shape_basis");
    asset.expr_basis = read_matrix(r, 3 * v, e, "expr_basis");
    if (t > r.remaining() / 12) {
        r.fail("triangle count " + std::to_string(t) + " exceeds the remaining bytes");
    }
    asset.triangles.resize(t);
    for (auto &tri : asset.triangles) {
        for (auto &idx : tri) {
            idx = r.uint<std::uint32_t>("triangle index");
        }
    }
    for (std::size_t i = 0; i < reserved; ++i) {
        ReservedBlock block;
        block.tag = r.uint<std::uint32_t>("reserved tag");
        const auto len = r.uint<std::uint64_t>("reserved length");
        if (len > r.remaining()) {
            r.fail("reserved block of " + std::to_string(len) + " bytes exceeds the remaining " +
                   std::to_string(r.remaining()));
        }
        const std::string raw = r.bytes(static_cast<std::size_t>(len), "reserved payload");
        block.payload.assign(raw.begin(), raw.end());
        asset.reserved.push_back(std::move(block));
    }
    r.expect_end();
    asset.validate();
    return asset;
}

MorphableAsset load_asset(const std::filesystem::path &path) { return parse_asset(training::read_file_bytes(path)); }

void save_asset(const MorphableAsset &asset, const std::filesystem::path &path) {
    training::write_file_bytes(path, asset_bytes(asset));
}

MeshResult decode_mesh(const MorphableAsset &asset, std::span<const double> shape_params,
                       std::span<const double> expr_params) {
    if (shape_params.size() > asset.shape_count()) {
        throw Error(ErrorKind::shape, "shape parameters: " + std::to_string(shape_params.size()) +
                                          " values for a basis of " + std::to_string(asset.shape_count()));
    }
    if (expr_params.size() > asset.expr_count()) {
        throw Error(ErrorKind::shape, "expression parameters: " + std::to_string(expr_params.size()) +
                                          " values for a basis of " + std::to_string(asset.expr_count()));
    }
    MeshResult mesh{asset.mean, asset.triangles};
    auto out = mesh.vertices.values();
    for (std::size_t row = 0; row < out.size(); ++row) {
        double offset = 0.0;
        const auto s = asset.shape_basis.row(row);
        for (std::size_t j = 0; j < shape_params.size(); ++j) {
            offset += s[j] * shape_params[j];
        }
        const auto e = asset.expr_basis.row(row);
        for (std::size_t j = 0; j < expr_params.size(); ++j) {
            offset += e[j] * expr_params[j];
        }
        out[row] += offset;
    }
    mesh.vertices.require_finite("decoded vertices");
    return mesh;
}

std::string obj_text(const MeshResult &mesh) {
    std::string out;
    for (std::size_t v = 0; v < mesh.vertices.rows(); ++v) {
        out += "v " + text::format_double(mesh.vertices(v, 0)) + ' ' + text::format_double(mesh.vertices(v, 1)) + ' ' +
               text::format_double(mesh.vertices(v, 2)) + '\n';
    }
    for (const auto &t : mesh.triangles) {
        out += "f " + std::to_string(t[0] + 1) + ' ' + std::to_string(t[1] + 1) + ' ' + std::to_string(t[2] + 1) + '\n';
    }
    return out;
}

void export_obj(const MeshResult &mesh, const std::filesystem::path &path) { text::write_text(path, obj_text(mesh)); }

MeshResult parse_obj(const std::string &content) {
    std::vector<std::vector<double>> vertices;
    MeshResult mesh;
    const auto ls = text::lines(content);
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const std::string ctx = "obj line " + std::to_string(i + 1);
        const auto &line = ls[i];
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto fields = text::split(line, ' ');
        if (fields.size() != 4 || (fields[0] != "v" && fields[0] != "f")) {
            throw Error(ErrorKind::format, ctx + ": expected 'v x y z' or 'f a b c'");
        }
        if (fields[0] == "v") {
            vertices.push_back({text::parse_double(fields[1], ctx), text::parse_double(fields[2], ctx),
                                text::parse_double(fields[3], ctx)});
        } else {
            Triangle t{};
            for (std::size_t k = 0; k < 3; ++k) {
                const auto idx = text::parse_int(fields[1 + k], ctx);
                if (idx < 1) {
                    throw Error(ErrorKind::format, ctx + ": face indices are 1-based");
                }
                t[k] = static_cast<std::uint32_t>(idx - 1);
            }
            mesh.triangles.push_back(t);
        }
    }
    mesh.vertices = vertices.empty() ? Matrix(0, 3) : Matrix::from_rows(vertices);
    for (const auto &t : mesh.triangles) {
        for (auto idx : t) {
            if (idx >= mesh.vertices.rows()) {
                throw Error(ErrorKind::format, "obj face references vertex " + std::to_string(idx + 1) + " of " +
                                                   std::to_string(mesh.vertices.rows()));
            }
        }
    }
    return mesh;
}

MeshParams parse_mesh_params(const std::string &content) {
    MeshParams params;
    bool seen_shape = false;
    bool seen_expr = false;
    const auto ls = text::lines(content);
    for (std::size_t i = 0; i < ls.size(); ++i) {
        if (ls[i].empty() || ls[i][0] == '#') {
            continue;
        }
        const std::string ctx = "params line " + std::to_string(i + 1);
        const auto fields = text::split(ls[i], ',');
        std::vector<double> *target = nullptr;
        if (fields[0] == "shape" && !seen_shape) {
            target = &params.shape;
            seen_shape = true;
        } else if (fields[0] == "expr" && !seen_expr) {
            target = &params.expr;
            seen_expr = true;
        } else {
            throw Error(ErrorKind::format, ctx + ": expected one 'shape,...' and one 'expr,...' line");
        }
        for (std::size_t k = 1; k < fields.size(); ++k) {
            target->push_back(text::parse_double(fields[k], ctx));
        }
    }
    return params;
}

MorphableAsset make_toy_asset(std::size_t vertices, std::size_t shape_count, std::size_t expr_count, Rng &rng) {
    if (vertices < 3) {
        throw Error(ErrorKind::config, "toy asset needs at least 3 vertices");
    }
    MorphableAsset asset;
    asset.mean = Matrix(vertices, 3);
    for (std::size_t v = 0; v < vertices; ++v) {
        const double angle = 2.0 * M_PI * static_cast<double>(v) / static_cast<double>(vertices);
        asset.mean(v, 0) = std::cos(angle);
        asset.mean(v, 1) = std::sin(angle);
        asset.mean(v, 2) = 0.1 * rng.normal();
    }
    asset.shape_basis = Matrix(3 * vertices, shape_count);
    asset.expr_basis = Matrix(3 * vertices, expr_count);
    for (double &x : asset.shape_basis.values()) {
        x = 0.05 * rng.normal();
    }
    for (double &x : asset.expr_basis.values()) {
        x = 0.02 * rng.normal();
    }
    for (std::size_t v = 1; v + 1 < vertices; ++v) {
        asset.triangles.push_back({0, static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(v + 1)});
    }
    return asset;
}

}  // namespace fei3d::morphviz
