#include "cli_support.hpp"

#include "fei3d/error.hpp"
#include "fei3d/losses.hpp"
#include "fei3d/text_io.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

namespace fei3d::cli {

namespace {

std::string json_scalar(const nlohmann::json &v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
}

nlohmann::json typed(const std::string &raw) {
    if (raw.empty()) {
        return nullptr;
    }
    try {
        auto j = nlohmann::json::parse(raw);
        if (j.is_number() || j.is_boolean() || j.is_array()) {
            return j;
        }
    } catch (const nlohmann::json::exception &) {
    }
    return raw;
}

}  // namespace

void apply_config_file(CLI::App &command, const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open config file '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::config, "config file '" + path.string() + "': " + e.what());
    }
    if (!j.is_object()) {
        throw Error(ErrorKind::config, "config file '" + path.string() + "' must hold a JSON object");
    }
    for (const auto &[key, value] : j.items()) {
        std::string flag = key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (flag == "command" || flag == "config") {
            continue;
        }
        CLI::Option *opt = command.get_option_no_throw("--" + flag);
        if (opt == nullptr) {
            throw Error(ErrorKind::usage, "config file '" + path.string() + "': unknown option '" + key + "'");
        }
        if (opt->count() > 0 || value.is_null()) {
            continue;
        }
        if (value.is_array()) {
            for (const auto &e : value) {
                opt->add_result(json_scalar(e));
            }
        } else {
            opt->add_result(json_scalar(value));
        }
        try {
            opt->run_callback();
        } catch (const CLI::Error &e) {
            throw Error(ErrorKind::usage, "config file '" + path.string() + "': option '" + key + "': " + e.what());
        }
    }
}

nlohmann::json resolved_options(const CLI::App &command) {
    nlohmann::json out = nlohmann::json::object();
    out["command"] = command.get_name();
    for (const CLI::Option *opt : command.get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name == "config" || name.empty()) {
            continue;
        }
        const auto &results = opt->results();
        if (opt->get_expected_max() == 0) {
            out[name] = opt->count() > 0;
        } else if (results.empty()) {
            out[name] = typed(opt->get_default_str());
        } else if (opt->get_expected_max() > 1) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto &r : results) {
                arr.push_back(typed(r));
            }
            out[name] = arr;
        } else {
            out[name] = typed(results.back());
        }
    }
    return out;
}

unsigned resolve_threads(const CLI::Option &flag, unsigned flag_value) {
    if (flag.count() > 0) {
        return std::max(1U, flag_value);
    }
    if (const char *env = std::getenv("FEI3D_THREADS"); env != nullptr && *env != '\0') {
        const auto v = text::parse_int(env, "FEI3D_THREADS");
        if (v < 1) {
            throw Error(ErrorKind::config, "FEI3D_THREADS must be a positive integer");
        }
        return static_cast<unsigned>(v);
    }
    return 1;
}

void write_json(const std::filesystem::path &path, const nlohmann::json &j) {
    text::write_text(path, j.dump(2) + "\n");
}

nlohmann::json Evaluation::to_json() const {
    nlohmann::json j;
    j["samples"] = alignment.pairs.size();
    j["unmatched_predictions"] = alignment.dropped_a;
    j["unmatched_labels"] = alignment.dropped_b;
    j["classification"] = classification ? metrics::to_json(*classification) : nlohmann::json(nullptr);
    j["regression"] = regression ? metrics::to_json(*regression) : nlohmann::json(nullptr);
    return j;
}

Evaluation evaluate(const data::PredictionSet &predictions, const data::ParamDataset &truth) {
    Evaluation ev;
    ev.alignment = data::align(predictions.ids, truth.ids);
    std::vector<std::size_t> pred_rows;
    std::vector<std::size_t> truth_rows;
    for (const auto &[i, j] : ev.alignment.pairs) {
        pred_rows.push_back(i);
        truth_rows.push_back(j);
    }
    if (predictions.has_probs()) {
        const std::size_t classes = data::class_count(truth.label_space);
        if (predictions.probs.cols() != classes) {
            throw Error(ErrorKind::shape, "predictions have " + std::to_string(predictions.probs.cols()) +
                                              " classes but labels use " + std::string(data::to_string(truth.label_space)) +
                                              " (" + std::to_string(classes) + ")");
        }
        const auto pred = metrics::argmax_rows(gather_rows(predictions.probs, pred_rows));
        std::vector<int> labels;
        for (auto j : truth_rows) {
            labels.push_back(truth.labels[j]);
        }
        ev.classification = metrics::classification_report(labels, pred, classes);
    }
    if (predictions.has_va() && truth.has_va()) {
        ev.regression = metrics::regression_report(gather_rows(predictions.va, pred_rows), gather_rows(truth.va, truth_rows));
    }
    if (!ev.classification && !ev.regression) {
        throw Error(ErrorKind::data, "nothing to evaluate: predictions and labels share no payload");
    }
    return ev;
}

std::string report_tables(const std::vector<std::pair<std::string, const Evaluation *>> &rows) {
    std::vector<std::pair<std::string, metrics::ClassificationReport>> cls;
    std::vector<std::pair<std::string, metrics::RegressionReport>> reg;
    for (const auto &[name, ev] : rows) {
        if (ev->classification) {
            cls.emplace_back(name, *ev->classification);
        }
        if (ev->regression) {
            reg.emplace_back(name, *ev->regression);
        }
    }
    std::string out;
    if (!cls.empty()) {
        out += "Expression classification\n";
        out += metrics::format_classification_table(cls);
    }
    if (!reg.empty()) {
        if (!out.empty()) {
            out += '\n';
        }
        out += "Valence / arousal regression\n";
        out += metrics::format_regression_table(reg);
    }
    return out;
}

data::PredictionSet predictions_from_outputs(const Matrix &outputs, const nn::HeadKind &head,
                                             std::vector<std::string> ids, std::string source) {
    Matrix probs;
    Matrix va;
    if (head.class_count() > 0) {
        probs = losses::softmax(slice_cols(outputs, 0, head.class_count()));
    }
    if (head.has_va()) {
        va = slice_cols(outputs, outputs.cols() - 2, 2);
        for (double &v : va.values()) {
            v = std::clamp(v, -1.0, 1.0);
        }
    }
    return data::make_prediction_set(std::move(source), std::move(ids), std::move(probs), std::move(va));
}

}  // namespace fei3d::cli
