#include "fei3d/text_io.hpp"

#include "fei3d/error.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fei3d::text {

std::string format_double(double value) {
    if (value == 0.0) {
        return "0";
    }
    std::array<char, 32> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) {
        throw Error(ErrorKind::format, "cannot format double");
    }
    return {buf.data(), ptr};
}

double parse_double(std::string_view text, const std::string &context) {
    double v = 0.0;
    const auto *first = text.data();
    const auto *last = text.data() + text.size();
    if (!text.empty() && text.front() == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || text.empty()) {
        throw Error(ErrorKind::format, context + ": cannot parse '" + std::string(text) + "' as a number");
    }
    if (!std::isfinite(v)) {
        throw Error(ErrorKind::data, context + ": non-finite value '" + std::string(text) + "'");
    }
    return v;
}

long long parse_int(std::string_view text, const std::string &context) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw Error(ErrorKind::format, context + ": cannot parse '" + std::string(text) + "' as an integer");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::map<std::string, std::string> parse_directive(std::string_view line, std::string_view tag,
                                                   const std::string &context) {
    const std::string prefix = "# " + std::string(tag);
    if (!line.starts_with(prefix)) {
        throw Error(ErrorKind::format, context + ": expected a '" + prefix + "' header line");
    }
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(line.substr(prefix.size()))};
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::format, context + ": malformed header token '" + token + "'");
        }
        kv[token.substr(0, eq)] = token.substr(eq + 1);
    }
    return kv;
}

std::string read_text(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path &path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw Error(ErrorKind::io, "write to '" + path.string() + "' failed");
    }
}

std::vector<std::string> lines(const std::string &content) {
    std::vector<std::string> out;
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        out.push_back(line);
    }
    return out;
}

}  // namespace fei3d::text
