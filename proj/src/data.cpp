#include "fei3d/data.hpp"

#include "fei3d/binary_io.hpp"
#include "fei3d/checkpoint.hpp"
#include "fei3d/error.hpp"
#include "fei3d/losses.hpp"
#include "fei3d/text_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <unordered_set>

namespace fei3d::data {

namespace {

constexpr std::string_view dataset_magic{"FEIDS\0", 6};
constexpr std::uint16_t dataset_version = 1;

std::string line_ctx(const std::string &source, std::size_t line) {
    return source + " line " + std::to_string(line);
}

std::string param_column(std::size_t i) { return fmt::format("p{:03d}", i); }
std::string feature_column(std::size_t i) { return fmt::format("f{:03d}", i); }

void check_id(const std::string &id, const std::string &ctx) {
    if (id.empty()) {
        throw Error(ErrorKind::data, ctx + ": empty sample id");
    }
    if (id.find_first_of(",\n\r") != std::string::npos) {
        throw Error(ErrorKind::data, ctx + ": sample id '" + id + "' contains a separator");
    }
}

void check_unique(const std::vector<std::string> &ids, const std::string &what) {
    std::unordered_set<std::string> seen;
    for (const auto &id : ids) {
        if (!seen.insert(id).second) {
            throw Error(ErrorKind::data, what + ": duplicate sample id '" + id + "'");
        }
    }
}

ParamKind check_kind(std::size_t found, const std::optional<ParamKind> &expected_kind, const std::string &source) {
    if (!expected_kind) {
        return ParamKind::custom(found);
    }
    const ParamKind &expected = *expected_kind;
    if (found != expected.dim()) {
        throw Error(ErrorKind::data, source + ": parameter kind mismatch: found " + std::to_string(found) +
                                         " parameter columns, expected " + expected.name() + " (" +
                                         std::to_string(expected.dim()) + ")");
    }
    return expected;
}

void check_va_value(double v, const char *which, const std::string &ctx) {
    if (v < -1.0 || v > 1.0) {
        throw Error(ErrorKind::data, ctx + ": " + which + " " + text::format_double(v) + " outside [-1, 1]");
    }
}

std::vector<std::string> content_lines(const std::string &content) {
    auto ls = text::lines(content);
    while (!ls.empty() && ls.back().empty()) {
        ls.pop_back();
    }
    return ls;
}

}  // namespace

// ---------------------------------------------------------------- label space / kind

std::size_t class_count(LabelSpace space) noexcept { return space == LabelSpace::raf7 ? 7 : 8; }

std::string_view to_string(LabelSpace space) noexcept { return space == LabelSpace::raf7 ? "raf7" : "affect8"; }

LabelSpace parse_label_space(std::string_view name) {
    if (name == "raf7") return LabelSpace::raf7;
    if (name == "affect8") return LabelSpace::affect8;
    throw Error(ErrorKind::config, "unknown label space '" + std::string(name) + "' (expected raf7 or affect8)");
}

ParamKind ParamKind::custom(std::size_t dim) {
    if (dim == 0) {
        throw Error(ErrorKind::config, "custom parameter kind needs a dimension of at least 1");
    }
    return {Kind::custom, dim};
}

ParamKind ParamKind::parse(std::string_view name) {
    if (name == "emoca_short") return emoca_short();
    if (name == "emoca_full") return emoca_full();
    if (name == "smirk_short") return smirk_short();
    if (name == "smirk_full") return smirk_full();
    if (name.starts_with("custom:")) {
        const auto digits = name.substr(7);
        std::size_t d = 0;
        const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), d);
        if (ec == std::errc{} && ptr == digits.data() + digits.size()) {
            return custom(d);
        }
    }
    throw Error(ErrorKind::config, "unknown parameter kind '" + std::string(name) +
                                       "' (expected emoca_short, emoca_full, smirk_short, smirk_full or custom:<d>)");
}

std::string ParamKind::name() const {
    switch (kind_) {
        case Kind::emoca_short: return "emoca_short";
        case Kind::emoca_full: return "emoca_full";
        case Kind::smirk_short: return "smirk_short";
        case Kind::smirk_full: return "smirk_full";
        case Kind::custom: return "custom:" + std::to_string(dim_);
    }
    return "unknown";
}

// ---------------------------------------------------------------- dataset

void ParamDataset::validate() const {
    const std::size_t n = ids.size();
    if (params.rows() != n || labels.size() != n) {
        throw Error(ErrorKind::data, "dataset has " + std::to_string(n) + " ids, " + std::to_string(params.rows()) +
                                         " parameter rows and " + std::to_string(labels.size()) + " labels");
    }
    check_kind(params.cols(), kind, "dataset");
    if (has_va() && (va.rows() != n || va.cols() != 2)) {
        throw Error(ErrorKind::data, "dataset valence/arousal block is " + va.shape_string() + ", expected " +
                                         std::to_string(n) + "x2");
    }
    const std::size_t classes = class_count(label_space);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string ctx = "sample '" + ids[i] + "'";
        check_id(ids[i], ctx);
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw Error(ErrorKind::data, ctx + ": label " + std::to_string(labels[i]) + " outside " +
                                             std::string(to_string(label_space)) + " [0, " + std::to_string(classes) +
                                             ")");
        }
        if (has_va()) {
            check_va_value(va(i, 0), "valence", ctx);
            check_va_value(va(i, 1), "arousal", ctx);
        }
    }
    params.require_finite("dataset parameters");
    check_unique(ids, "dataset");
}

ParamDataset parse_param_dataset_csv(const std::string &content, const std::optional<ParamKind> &expected_kind,
                                     const std::string &source_name) {
    const auto ls = content_lines(content);
    if (ls.size() < 2) {
        throw Error(ErrorKind::format, source_name + ": missing header lines");
    }
    const auto directive = text::parse_directive(ls[0], "fei3d-dataset", line_ctx(source_name, 1));
    const auto space_it = directive.find("label_space");
    if (space_it == directive.end()) {
        throw Error(ErrorKind::format, line_ctx(source_name, 1) + ": header does not declare label_space");
    }

    ParamDataset ds;
    ds.label_space = parse_label_space(space_it->second);

    const auto header = text::split(ls[1], ',');
    if (header.size() < 5 || header[0] != "id" || header[1] != "label" || header[2] != "valence" ||
        header[3] != "arousal") {
        throw Error(ErrorKind::format, line_ctx(source_name, 2) + ": header must start with id,label,valence,arousal");
    }
    const std::size_t dim = header.size() - 4;
    for (std::size_t i = 0; i < dim; ++i) {
        if (header[4 + i] != param_column(i)) {
            throw Error(ErrorKind::format, line_ctx(source_name, 2) + ": column " + std::to_string(5 + i) + " is '" +
                                               std::string(header[4 + i]) + "', expected '" + param_column(i) + "'");
        }
    }
    ds.kind = check_kind(dim, expected_kind, source_name);

    const std::size_t n = ls.size() - 2;
    ds.params = Matrix(n, dim);
    ds.labels.resize(n);
    Matrix va(n, 2);
    std::optional<bool> va_present;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t line_no = r + 3;
        const std::string ctx = line_ctx(source_name, line_no);
        const auto fields = text::split(ls[r + 2], ',');
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::format, ctx + ": expected " + std::to_string(header.size()) + " fields, got " +
                                               std::to_string(fields.size()));
        }
        ds.ids.emplace_back(fields[0]);
        check_id(ds.ids.back(), ctx);
        const auto label = text::parse_int(fields[1], ctx + " label");
        if (label < 0 || static_cast<std::size_t>(label) >= class_count(ds.label_space)) {
            throw Error(ErrorKind::data, ctx + ": label " + std::to_string(label) + " outside " +
                                             std::string(to_string(ds.label_space)));
        }
        ds.labels[r] = static_cast<int>(label);
        const bool has_v = !fields[2].empty();
        const bool has_a = !fields[3].empty();
        if (has_v != has_a) {
            throw Error(ErrorKind::format, ctx + ": valence and arousal must both be present or both empty");
        }
        if (va_present && *va_present != has_v) {
            throw Error(ErrorKind::data, ctx + ": valence/arousal present on some rows but not others");
        }
        va_present = has_v;
        if (has_v) {
            va(r, 0) = text::parse_double(fields[2], ctx + " valence");
            va(r, 1) = text::parse_double(fields[3], ctx + " arousal");
            check_va_value(va(r, 0), "valence", ctx);
            check_va_value(va(r, 1), "arousal", ctx);
        }
        for (std::size_t c = 0; c < dim; ++c) {
            ds.params(r, c) = text::parse_double(fields[4 + c], ctx + " " + param_column(c));
        }
    }
    if (va_present.value_or(false)) {
        ds.va = std::move(va);
    }
    check_unique(ds.ids, source_name);
    ds.validate();
    return ds;
}

std::string param_dataset_csv(const ParamDataset &ds) {
    ds.validate();
    std::string out = "# fei3d-dataset label_space=" + std::string(to_string(ds.label_space)) + "\n";
    out += "id,label,valence,arousal";
    for (std::size_t c = 0; c < ds.dim(); ++c) {
        out += ',';
        out += param_column(c);
    }
    out += '\n';
    for (std::size_t r = 0; r < ds.size(); ++r) {
        out += ds.ids[r];
        out += ',';
        out += std::to_string(ds.labels[r]);
        out += ',';
        if (ds.has_va()) {
            out += text::format_double(ds.va(r, 0));
            out += ',';
            out += text::format_double(ds.va(r, 1));
        } else {
            out += ',';
        }
        for (double v : ds.params.row(r)) {
            out += ',';
            out += text::format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::vector<std::uint8_t> param_dataset_binary(const ParamDataset &ds) {
    ds.validate();
    binary::Writer w;
    w.bytes(dataset_magic);
    w.uint<std::uint16_t>(dataset_version);
    w.uint<std::uint8_t>(ds.label_space == LabelSpace::raf7 ? 0 : 1);
    w.uint<std::uint8_t>(ds.has_va() ? 1 : 0);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.dim()));
    w.uint<std::uint64_t>(ds.size());
    for (std::size_t r = 0; r < ds.size(); ++r) {
        w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.ids[r].size()));
        w.bytes(ds.ids[r]);
        w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.labels[r]));
        if (ds.has_va()) {
            w.f64(ds.va(r, 0));
            w.f64(ds.va(r, 1));
        }
        for (double v : ds.params.row(r)) {
            w.f64(v);
        }
    }
    return w.take();
}

ParamDataset parse_param_dataset_binary(const std::vector<std::uint8_t> &bytes,
                                        const std::optional<ParamKind> &expected_kind) {
    binary::Reader r(bytes, "dataset");
    if (r.bytes(dataset_magic.size(), "magic") != dataset_magic) {
        throw Error(ErrorKind::format, "dataset at byte offset 0: bad magic (expected \"FEIDS\\0\")");
    }
    const auto version = r.uint<std::uint16_t>("version");
    if (version != dataset_version) {
        r.fail("unsupported dataset version " + std::to_string(version) + " (supported: " +
               std::to_string(dataset_version) + ")");
    }
    const auto space = r.uint<std::uint8_t>("label space");
    if (space > 1) {
        r.fail("unknown label space code " + std::to_string(space));
    }
    const auto has_va = r.uint<std::uint8_t>("va flag");
    const auto dim = r.uint<std::uint32_t>("dimension");
    const auto n = r.uint<std::uint64_t>("sample count");
    ParamDataset ds;
    ds.kind = check_kind(dim, expected_kind, "dataset");
    ds.label_space = space == 0 ? LabelSpace::raf7 : LabelSpace::affect8;
    const std::size_t per_sample = 8 + (has_va ? 16 : 0) + 8 * std::size_t{dim};
    if (n > r.remaining() / per_sample) {
        r.fail("sample count " + std::to_string(n) + " exceeds the remaining " + std::to_string(r.remaining()) +
               " bytes");
    }
    ds.params = Matrix(static_cast<std::size_t>(n), dim);
    ds.labels.resize(static_cast<std::size_t>(n));
    if (has_va) {
        ds.va = Matrix(static_cast<std::size_t>(n), 2);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto id_len = r.uint<std::uint32_t>("id length");
        ds.ids.push_back(r.bytes(id_len, "id"));
        ds.labels[i] = static_cast<int>(r.uint<std::uint32_t>("label"));
        if (has_va) {
            ds.va(i, 0) = r.f64("valence");
            ds.va(i, 1) = r.f64("arousal");
        }
        for (double &v : ds.params.row(i)) {
            v = r.f64("parameter");
        }
    }
    r.expect_end();
    ds.validate();
    return ds;
}

ParamDataset load_param_dataset(const std::filesystem::path &path, const std::optional<ParamKind> &expected_kind) {
    const auto bytes = training::read_file_bytes(path);
    if (bytes.size() >= dataset_magic.size() &&
        std::equal(dataset_magic.begin(), dataset_magic.end(), bytes.begin(),
                   [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
        return parse_param_dataset_binary(bytes, expected_kind);
    }
    return parse_param_dataset_csv(std::string(bytes.begin(), bytes.end()), expected_kind, path.string());
}

void save_param_dataset(const ParamDataset &ds, const std::filesystem::path &path) {
    if (path.extension() == ".bin") {
        training::write_file_bytes(path, param_dataset_binary(ds));
    } else {
        text::write_text(path, param_dataset_csv(ds));
    }
}

std::vector<std::size_t> class_frequencies(const ParamDataset &ds) {
    if (ds.size() == 0) {
        throw Error(ErrorKind::data, "class_frequencies: empty dataset");
    }
    std::vector<std::size_t> counts(class_count(ds.label_space), 0);
    for (int y : ds.labels) {
        ++counts.at(static_cast<std::size_t>(y));
    }
    return counts;
}

training::TrainingData to_training_data(const ParamDataset &ds) {
    return {ds.ids, ds.params, {ds.labels, ds.va}};
}

// ---------------------------------------------------------------- predictions

std::optional<std::size_t> PredictionSet::find(const std::string &id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

void PredictionSet::build_index() {
    check_unique(ids, "predictions '" + source + "'");
    index_.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        index_.emplace(ids[i], i);
    }
}

namespace {

void normalize_rows(Matrix &probs, bool from_logits, const std::string &source,
                    const std::vector<std::size_t> &line_numbers) {
    if (from_logits) {
        probs = losses::softmax(probs);
        return;
    }
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        auto row = probs.row(r);
        double sum = 0.0;
        for (double v : row) {
            if (v < 0.0) {
                throw Error(ErrorKind::data, line_ctx(source, line_numbers[r]) + ": negative probability " +
                                                 text::format_double(v));
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw Error(ErrorKind::data, line_ctx(source, line_numbers[r]) + ": probabilities sum to " +
                                             text::format_double(sum) +
                                             "; not normalized (pass logits with --from-logits)");
        }
        for (double &v : row) {
            v /= sum;
        }
    }
}

}  // namespace

PredictionSet make_prediction_set(std::string source, std::vector<std::string> ids, Matrix probs, Matrix va) {
    PredictionSet ps;
    ps.source = std::move(source);
    ps.ids = std::move(ids);
    ps.probs = std::move(probs);
    ps.va = std::move(va);
    if ((ps.has_probs() && ps.probs.rows() != ps.ids.size()) || (ps.has_va() && ps.va.rows() != ps.ids.size())) {
        throw Error(ErrorKind::shape, "prediction set rows do not match its ids");
    }
    ps.build_index();
    return ps;
}

PredictionSet parse_predictions_csv(const std::string &content, bool from_logits, const std::string &source_name) {
    const auto ls = content_lines(content);
    std::size_t header_line = 0;
    std::string source = "unknown";
    if (!ls.empty() && ls[0].starts_with("#")) {
        const auto kv = text::parse_directive(ls[0], "fei3d-predictions", line_ctx(source_name, 1));
        if (auto it = kv.find("source"); it != kv.end()) {
            source = it->second;
        }
        header_line = 1;
    }
    if (ls.size() <= header_line) {
        throw Error(ErrorKind::format, source_name + ": missing header");
    }
    const auto header = text::split(ls[header_line], ',');
    if (header.empty() || header[0] != "id") {
        throw Error(ErrorKind::format, line_ctx(source_name, header_line + 1) + ": first column must be 'id'");
    }
    std::size_t classes = 0;
    while (1 + classes < header.size() && header[1 + classes] == "p" + std::to_string(classes)) {
        ++classes;
    }
    std::size_t next = 1 + classes;
    bool has_va = false;
    if (next + 2 == header.size() && header[next] == "valence" && header[next + 1] == "arousal") {
        has_va = true;
        next += 2;
    }
    if (next != header.size()) {
        throw Error(ErrorKind::format, line_ctx(source_name, header_line + 1) + ": unexpected column '" +
                                           std::string(header[next]) + "'");
    }
    if (classes == 0 && !has_va) {
        throw Error(ErrorKind::format,
                    source_name + ": schema error: neither class probabilities nor valence/arousal columns");
    }

    const std::size_t n = ls.size() - header_line - 1;
    std::vector<std::string> ids;
    Matrix probs(classes > 0 ? n : 0, classes);
    Matrix va(has_va ? n : 0, 2);
    std::vector<std::size_t> line_numbers;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t line_no = header_line + 2 + r;
        const std::string ctx = line_ctx(source_name, line_no);
        const auto fields = text::split(ls[header_line + 1 + r], ',');
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::format, ctx + ": expected " + std::to_string(header.size()) + " fields, got " +
                                               std::to_string(fields.size()));
        }
        ids.emplace_back(fields[0]);
        check_id(ids.back(), ctx);
        for (std::size_t c = 0; c < classes; ++c) {
            probs(r, c) = text::parse_double(fields[1 + c], ctx + " p" + std::to_string(c));
        }
        if (has_va) {
            va(r, 0) = text::parse_double(fields[1 + classes], ctx + " valence");
            va(r, 1) = text::parse_double(fields[2 + classes], ctx + " arousal");
        }
        line_numbers.push_back(line_no);
    }
    if (classes > 0) {
        normalize_rows(probs, from_logits, source_name, line_numbers);
    }
    return make_prediction_set(source, std::move(ids), std::move(probs), std::move(va));
}

PredictionSet parse_predictions_jsonl(const std::string &content, bool from_logits, const std::string &source_name) {
    const auto ls = content_lines(content);
    std::vector<std::string> ids;
    std::vector<std::vector<double>> prob_rows;
    std::vector<std::vector<double>> va_rows;
    std::vector<std::size_t> line_numbers;
    std::string source = "unknown";
    std::optional<bool> has_probs;
    std::optional<bool> has_va;
    for (std::size_t i = 0; i < ls.size(); ++i) {
        if (ls[i].empty()) {
            continue;
        }
        const std::string ctx = line_ctx(source_name, i + 1);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(ls[i]);
            ids.push_back(j.at("id").get<std::string>());
            if (j.contains("source")) {
                source = j["source"].get<std::string>();
            }
        } catch (const nlohmann::json::exception &e) {
            throw Error(ErrorKind::format, ctx + ": " + e.what());
        }
        check_id(ids.back(), ctx);
        const bool p = j.contains("probs");
        const bool v = j.contains("valence") && j.contains("arousal");
        if ((has_probs && *has_probs != p) || (has_va && *has_va != v)) {
            throw Error(ErrorKind::format, ctx + ": payload fields differ from earlier rows");
        }
        has_probs = p;
        has_va = v;
        try {
            if (p) {
                prob_rows.push_back(j["probs"].get<std::vector<double>>());
            }
            if (v) {
                va_rows.push_back({j["valence"].get<double>(), j["arousal"].get<double>()});
            }
        } catch (const nlohmann::json::exception &e) {
            throw Error(ErrorKind::format, ctx + ": " + e.what());
        }
        line_numbers.push_back(i + 1);
    }
    if (ids.empty() || (!has_probs.value_or(false) && !has_va.value_or(false))) {
        throw Error(ErrorKind::format,
                    source_name + ": schema error: neither class probabilities nor valence/arousal present");
    }
    Matrix probs = *has_probs ? Matrix::from_rows(prob_rows) : Matrix();
    Matrix va = *has_va ? Matrix::from_rows(va_rows) : Matrix();
    if (*has_probs) {
        normalize_rows(probs, from_logits, source_name, line_numbers);
    }
    return make_prediction_set(source, std::move(ids), std::move(probs), std::move(va));
}

PredictionSet load_predictions(const std::filesystem::path &path, bool from_logits) {
    const std::string content = text::read_text(path);
    if (path.extension() == ".jsonl") {
        return parse_predictions_jsonl(content, from_logits, path.string());
    }
    return parse_predictions_csv(content, from_logits, path.string());
}

std::string predictions_csv(const PredictionSet &ps) {
    std::string out = "# fei3d-predictions source=" + ps.source + "\nid";
    for (std::size_t c = 0; c < ps.probs.cols(); ++c) {
        out += ",p" + std::to_string(c);
    }
    if (ps.has_va()) {
        out += ",valence,arousal";
    }
    out += '\n';
    for (std::size_t r = 0; r < ps.size(); ++r) {
        out += ps.ids[r];
        if (ps.has_probs()) {
            for (double v : ps.probs.row(r)) {
                out += ',';
                out += text::format_double(v);
            }
        }
        if (ps.has_va()) {
            out += ',' + text::format_double(ps.va(r, 0)) + ',' + text::format_double(ps.va(r, 1));
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------- features

FeatureSet parse_features_csv(const std::string &content, const std::string &source_name) {
    const auto ls = content_lines(content);
    FeatureSet fs;
    std::size_t header_line = 0;
    if (!ls.empty() && ls[0].starts_with("#")) {
        const auto kv = text::parse_directive(ls[0], "fei3d-features", line_ctx(source_name, 1));
        if (auto it = kv.find("source"); it != kv.end()) {
            fs.source = it->second;
        }
        header_line = 1;
    }
    if (ls.size() <= header_line) {
        throw Error(ErrorKind::format, source_name + ": missing header");
    }
    const auto header = text::split(ls[header_line], ',');
    if (header.size() < 2 || header[0] != "id") {
        throw Error(ErrorKind::format, line_ctx(source_name, header_line + 1) + ": expected id,f000,...");
    }
    const std::size_t dim = header.size() - 1;
    for (std::size_t c = 0; c < dim; ++c) {
        if (header[1 + c] != feature_column(c)) {
            throw Error(ErrorKind::format, line_ctx(source_name, header_line + 1) + ": column '" +
                                               std::string(header[1 + c]) + "', expected '" + feature_column(c) + "'");
        }
    }
    const std::size_t n = ls.size() - header_line - 1;
    fs.features = Matrix(n, dim);
    for (std::size_t r = 0; r < n; ++r) {
        const std::string ctx = line_ctx(source_name, header_line + 2 + r);
        const auto fields = text::split(ls[header_line + 1 + r], ',');
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::format, ctx + ": expected " + std::to_string(header.size()) + " fields, got " +
                                               std::to_string(fields.size()));
        }
        fs.ids.emplace_back(fields[0]);
        check_id(fs.ids.back(), ctx);
        for (std::size_t c = 0; c < dim; ++c) {
            fs.features(r, c) = text::parse_double(fields[1 + c], ctx + " " + feature_column(c));
        }
    }
    check_unique(fs.ids, source_name);
    return fs;
}

FeatureSet load_features(const std::filesystem::path &path) {
    return parse_features_csv(text::read_text(path), path.string());
}

std::string features_csv(const FeatureSet &fs) {
    std::string out = "# fei3d-features source=" + fs.source + "\nid";
    for (std::size_t c = 0; c < fs.features.cols(); ++c) {
        out += ',' + feature_column(c);
    }
    out += '\n';
    for (std::size_t r = 0; r < fs.ids.size(); ++r) {
        out += fs.ids[r];
        for (double v : fs.features.row(r)) {
            out += ',' + text::format_double(v);
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------- align

AlignResult align(std::span<const std::string> a, std::span<const std::string> b) {
    std::unordered_map<std::string, std::size_t> b_index;
    for (std::size_t j = 0; j < b.size(); ++j) {
        b_index.emplace(b[j], j);
    }
    AlignResult result;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto it = b_index.find(a[i]);
        if (it == b_index.end()) {
            ++result.dropped_a;
        } else {
            result.pairs.emplace_back(i, it->second);
        }
    }
    result.dropped_b = b.size() - result.pairs.size();
    if (result.pairs.empty()) {
        throw Error(ErrorKind::alignment, "no sample ids in common (" + std::to_string(a.size()) + " vs " +
                                              std::to_string(b.size()) + " ids)");
    }
    return result;
}

// ---------------------------------------------------------------- synthetic data

void SynthSpec::validate() const {
    if (classes == 0 || dim == 0) {
        throw Error(ErrorKind::config, "synthetic data settings needs at least one class and one dimension");
    }
    if (classes > class_count(label_space)) {
        throw Error(ErrorKind::config, "synthetic data settings has " + std::to_string(classes) + " classes but label space " +
                                           std::string(to_string(label_space)) + " holds " +
                                           std::to_string(class_count(label_space)));
    }
    if (classes > dim) {
        throw Error(ErrorKind::config, "synthetic data settings needs dim >= classes for orthogonal class centers");
    }
    if (!(margin >= 0.0) || !(noise >= 0.0) || !(va_scale >= 0.0) || !(va_noise >= 0.0)) {
        throw Error(ErrorKind::config, "synthetic data settings scales must be non-negative");
    }
}

SynthModel make_synth_model(const SynthSpec &spec, Rng &rng) {
    spec.validate();
    SynthModel m{spec, Matrix(spec.classes, spec.dim), Matrix(2, spec.dim), {0.0, 0.0}};
    // Orthonormal directions scaled by √2·margin put every pair of centers
    // 2·margin apart, i.e. `margin` from their bisecting hyperplane.
    const double radius = std::sqrt(2.0) * spec.margin;
    for (std::size_t k = 0; k < spec.classes; ++k) {
        std::vector<double> v(spec.dim);
        double norm = 0.0;
        do {
            for (double &x : v) {
                x = rng.normal();
            }
            for (std::size_t j = 0; j < k; ++j) {
                double dot = 0.0;
                for (std::size_t d = 0; d < spec.dim; ++d) {
                    dot += v[d] * m.centers(j, d) / radius;
                }
                for (std::size_t d = 0; d < spec.dim; ++d) {
                    v[d] -= dot * m.centers(j, d) / radius;
                }
            }
            norm = 0.0;
            for (double x : v) {
                norm += x * x;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-8);
        for (std::size_t d = 0; d < spec.dim; ++d) {
            m.centers(k, d) = radius * v[d] / norm;
        }
    }
    if (spec.with_va) {
        // approximate std of a unit projection of the data
        const double spread = std::sqrt(spec.noise * spec.noise + radius * radius / static_cast<double>(spec.dim));
        const double gain = spread > 0.0 ? spec.va_scale / spread : 0.0;
        for (std::size_t out = 0; out < 2; ++out) {
            std::vector<double> u(spec.dim);
            double norm = 0.0;
            for (double &x : u) {
                x = rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            double center_mean = 0.0;
            for (std::size_t d = 0; d < spec.dim; ++d) {
                m.va_weights(out, d) = gain * u[d] / norm;
            }
            for (std::size_t k = 0; k < spec.classes; ++k) {
                for (std::size_t d = 0; d < spec.dim; ++d) {
                    center_mean += m.va_weights(out, d) * m.centers(k, d);
                }
            }
            m.va_bias[out] = -center_mean / static_cast<double>(spec.classes);
        }
    }
    return m;
}

ParamDataset sample_synth(const SynthModel &model, std::size_t samples, Rng &rng, const std::string &id_prefix) {
    const auto &spec = model.spec;
    ParamDataset ds;
    ds.kind = ParamKind::custom(spec.dim);
    ds.label_space = spec.label_space;
    ds.params = Matrix(samples, spec.dim);
    ds.labels.resize(samples);
    if (spec.with_va) {
        ds.va = Matrix(samples, 2);
    }
    for (std::size_t i = 0; i < samples; ++i) {
        const std::size_t k = i % spec.classes;
        ds.ids.push_back(fmt::format("{}{:06d}", id_prefix, i));
        ds.labels[i] = static_cast<int>(k);
        auto row = ds.params.row(i);
        for (std::size_t d = 0; d < spec.dim; ++d) {
            row[d] = model.centers(k, d) + spec.noise * rng.normal();
        }
        if (spec.with_va) {
            for (std::size_t out = 0; out < 2; ++out) {
                double v = model.va_bias[out];
                for (std::size_t d = 0; d < spec.dim; ++d) {
                    v += model.va_weights(out, d) * row[d];
                }
                v += spec.va_noise * rng.normal();
                ds.va(i, out) = std::clamp(v, -1.0, 1.0);
            }
        }
    }
    ds.validate();
    return ds;
}

ParamDataset synth_generate(const SynthSpec &spec, std::size_t samples, Rng &rng) {
    const SynthModel model = make_synth_model(spec, rng);
    return sample_synth(model, samples, rng, "s");
}

PredictionSet simulate_predictor(const ParamDataset &ds, double accuracy, double va_noise, Rng &rng,
                                 const std::string &source) {
    if (!(accuracy >= 0.5 && accuracy <= 1.0)) {
        throw Error(ErrorKind::config, "simulated predictor accuracy must be in [0.5, 1]");
    }
    const std::size_t classes = class_count(ds.label_space);
    Matrix probs(ds.size(), classes);
    const double lo = 2.0 * accuracy - 1.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double c = lo < 1.0 ? rng.uniform(lo, 1.0) : 1.0;
        const auto truth = static_cast<std::size_t>(ds.labels[i]);
        std::size_t pred = truth;
        if (rng.uniform01() >= c && classes > 1) {
            pred = static_cast<std::size_t>(rng.below(classes - 1));
            if (pred >= truth) {
                ++pred;
            }
        }
        auto row = probs.row(i);
        const double rest = classes > 1 ? (1.0 - c) / static_cast<double>(classes - 1) : 0.0;
        std::fill(row.begin(), row.end(), rest);
        row[pred] = classes > 1 ? c : 1.0;
    }
    Matrix va;
    if (ds.has_va()) {
        va = Matrix(ds.size(), 2);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            for (std::size_t d = 0; d < 2; ++d) {
                va(i, d) = std::clamp(ds.va(i, d) + va_noise * rng.normal(), -1.0, 1.0);
            }
        }
    }
    return make_prediction_set(source, ds.ids, std::move(probs), std::move(va));
}

}  // namespace fei3d::data
