#include "fei3d/checkpoint.hpp"

#include "fei3d/binary_io.hpp"
#include "fei3d/error.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace fei3d::training {

namespace {

constexpr std::string_view magic{"FEI3D\0", 6};

nlohmann::json meta_to_json(const CheckpointMeta &meta) {
    nlohmann::json j;
    j["epoch"] = meta.epoch;
    j["best_val_loss"] = std::isfinite(meta.best_val_loss) ? nlohmann::json(meta.best_val_loss) : nlohmann::json();
    j["seed"] = meta.seed;
    j["extra"] = meta.extra;
    return j;
}

CheckpointMeta meta_from_json(const nlohmann::json &j) {
    CheckpointMeta meta;
    meta.epoch = j.at("epoch").get<std::size_t>();
    meta.best_val_loss = j.at("best_val_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                          : j.at("best_val_loss").get<double>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.extra = j.value("extra", nlohmann::json::object());
    return meta;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json &architecture, const CheckpointMeta &meta,
                                            const nn::Trainable &model) {
    const auto state = model.state();
    nlohmann::json header;
    header["architecture"] = architecture;
    header["meta"] = meta_to_json(meta);
    header["blocks"] = nlohmann::json::array();
    for (const auto &s : state) {
        header["blocks"].push_back({{"name", s.name}, {"rows", s.value->rows()}, {"cols", s.value->cols()}});
    }
    const std::string text = header.dump();

    binary::Writer w;
    w.bytes(magic);
    w.uint<std::uint16_t>(checkpoint_version);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
    w.bytes(text);
    for (const auto &s : state) {
        for (double v : s.value->values()) {
            w.f64(v);
        }
    }
    return w.take();
}

RawCheckpoint decode_checkpoint(const std::vector<std::uint8_t> &bytes) {
    binary::Reader r(bytes, "checkpoint");
    if (r.bytes(magic.size(), "magic") != magic) {
        throw Error(ErrorKind::format, "checkpoint at byte offset 0: bad magic (expected \"FEI3D\\0\")");
    }
    const auto version = r.uint<std::uint16_t>("version");
    if (version != checkpoint_version) {
        throw Error(ErrorKind::format, "checkpoint at byte offset 6: unsupported version " + std::to_string(version) +
                                           " (supported: " + std::to_string(checkpoint_version) + ")");
    }
    const auto header_len = r.uint<std::uint32_t>("header length");
    const std::size_t header_offset = r.offset();
    const std::string text = r.bytes(header_len, "JSON header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::format,
                    "checkpoint at byte offset " + std::to_string(header_offset) + ": bad JSON header: " + e.what());
    }

    RawCheckpoint out;
    try {
        out.architecture = header.at("architecture");
        out.meta = meta_from_json(header.at("meta"));
        for (const auto &b : header.at("blocks")) {
            const auto rows = b.at("rows").get<std::size_t>();
            const auto cols = b.at("cols").get<std::size_t>();
            out.blocks.push_back({b.at("name").get<std::string>(), Matrix(rows, cols)});
        }
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::format,
                    "checkpoint at byte offset " + std::to_string(header_offset) + ": malformed header: " + e.what());
    }
    for (auto &block : out.blocks) {
        r.need(block.value.size() * sizeof(double), "block '" + block.name + "'");
        for (double &v : block.value.values()) {
            v = r.f64(block.name);
        }
    }
    r.expect_end();
    return out;
}

void load_state(nn::Trainable &model, const std::vector<NamedBlock> &blocks) {
    auto refs = model.state();
    if (refs.size() != blocks.size()) {
        throw Error(ErrorKind::format, "checkpoint holds " + std::to_string(blocks.size()) +
                                           " blocks but the architecture needs " + std::to_string(refs.size()));
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].name != blocks[i].name) {
            throw Error(ErrorKind::format,
                        "checkpoint block " + std::to_string(i) + " is '" + blocks[i].name + "', expected '" +
                            refs[i].name + "'");
        }
        if (refs[i].value->rows() != blocks[i].value.rows() || refs[i].value->cols() != blocks[i].value.cols()) {
            throw Error(ErrorKind::format, "checkpoint block '" + blocks[i].name + "' has shape " +
                                               blocks[i].value.shape_string() + ", expected " +
                                               refs[i].value->shape_string());
        }
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        *refs[i].value = blocks[i].value;
    }
}

nlohmann::json describe(const nn::MlpModel &model) {
    const auto &o = model.options();
    return {{"model", "mlp"},
            {"input_dim", model.input_dim()},
            {"head", model.head_kind().name()},
            {"hidden_width", o.hidden_width},
            {"hidden_layers", o.hidden_layers},
            {"dropout", o.dropout},
            {"batch_norm", o.batch_norm},
            {"leaky_slope", o.leaky_slope},
            {"bn_momentum", o.bn_momentum},
            {"bn_epsilon", o.bn_epsilon}};
}

nn::MlpModel mlp_from_description(const nlohmann::json &a) {
    try {
        if (a.at("model").get<std::string>() != "mlp") {
            throw Error(ErrorKind::format, "checkpoint architecture is '" + a.at("model").get<std::string>() +
                                               "', expected 'mlp'");
        }
        nn::MlpOptions o;
        o.hidden_width = a.at("hidden_width").get<std::size_t>();
        o.hidden_layers = a.at("hidden_layers").get<std::size_t>();
        o.dropout = a.at("dropout").get<std::vector<double>>();
        o.batch_norm = a.at("batch_norm").get<bool>();
        o.leaky_slope = a.at("leaky_slope").get<double>();
        o.bn_momentum = a.at("bn_momentum").get<double>();
        o.bn_epsilon = a.at("bn_epsilon").get<double>();
        Rng placeholder(0);
        return nn::MlpModel(a.at("input_dim").get<std::size_t>(),
                            nn::HeadKind::parse(a.at("head").get<std::string>()), o, placeholder);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::format, std::string("malformed mlp architecture: ") + e.what());
    }
}

void save_checkpoint(const nn::MlpModel &model, const CheckpointMeta &meta, const std::filesystem::path &path) {
    write_file_bytes(path, encode_checkpoint(describe(model), meta, model));
}

LoadedMlp load_checkpoint(const std::filesystem::path &path) {
    const RawCheckpoint raw = decode_checkpoint(read_file_bytes(path));
    LoadedMlp out{mlp_from_description(raw.architecture), raw.meta};
    load_state(out.model, raw.blocks);
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::io, "cannot open '" + tmp.string() + "' for writing");
        }
        out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw Error(ErrorKind::io, "write to '" + tmp.string() + "' failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error(ErrorKind::io, "cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
    }
}

}  // namespace fei3d::training
