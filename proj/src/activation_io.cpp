#include "moefn/activation_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "moefn/config.hpp"

namespace moefn {

namespace {

constexpr char kMagic[] = "MOEACT1";
constexpr std::size_t kMagicLen = 7;

[[noreturn]] void bad_file(const std::string& path, const std::string& message) {
    throw ConfigError({path + ": " + message});
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        const auto b = field.find_first_not_of(" \t\r");
        const auto e = field.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) {
        return false;
    }
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

void put_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.put(static_cast<char>((bits >> (8 * i)) & 0xffu));
    }
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) {
        v = (v << 8) | p[i];
    }
    return v;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        bad_file(path, "cannot open activation file");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

ActivationMatrix parse_csv(const std::string& path, const std::string& text, bool labels_inline) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> labels;
    std::size_t cols = 0;
    int line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto fields = split_csv(line);
        std::vector<double> values(fields.size());
        bool numeric = true;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            numeric = numeric && parse_double(fields[i], values[i]);
        }
        if (first) {
            first = false;
            if (!numeric) {
                continue;  // header
            }
        }
        if (!numeric) {
            bad_file(path, "line " + std::to_string(line_no) + ": non-numeric field");
        }
        if (cols == 0) {
            cols = values.size();
            if (cols < (labels_inline ? 2u : 1u)) {
                bad_file(path, "line " + std::to_string(line_no) + ": too few columns");
            }
        } else if (values.size() != cols) {
            bad_file(path, "line " + std::to_string(line_no) + ": expected " + std::to_string(cols) + " columns, found " +
                               std::to_string(values.size()));
        }
        if (labels_inline) {
            const double l = values.back();
            if (l < 1.0 || l != std::floor(l)) {
                bad_file(path, "line " + std::to_string(line_no) + ": label must be a positive integer (1-based)");
            }
            labels.push_back(static_cast<std::size_t>(l) - 1);
            values.pop_back();
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) {
        bad_file(path, "no activation rows");
    }
    ActivationMatrix acts;
    acts.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            acts.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    if (labels_inline) {
        acts.labels = std::move(labels);
    }
    return acts;
}

ActivationMatrix parse_binary(const std::string& path, const std::string& bytes) {
    const std::size_t header = kMagicLen + 8;
    if (bytes.size() < header || bytes.compare(0, kMagicLen, kMagic) != 0) {
        bad_file(path, "missing MOEACT1 header");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t rows = get_le(p + kMagicLen, 4);
    const std::uint64_t cols = get_le(p + kMagicLen + 4, 4);
    if (rows == 0 || cols == 0) {
        bad_file(path, "empty activation matrix");
    }
    if (bytes.size() != header + rows * cols * 8) {
        bad_file(path, "expected " + std::to_string(rows * cols) + " values for " + std::to_string(rows) + " x " +
                           std::to_string(cols) + ", file size does not match");
    }
    ActivationMatrix acts;
    acts.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::uint64_t r = 0; r < rows; ++r) {
        for (std::uint64_t c = 0; c < cols; ++c) {
            const double v = std::bit_cast<double>(get_le(p + header + 8 * (r * cols + c), 8));
            if (!std::isfinite(v)) {
                bad_file(path, "non-finite value at row " + std::to_string(r + 1));
            }
            acts.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return acts;
}

}  // namespace

ActivationMatrix read_activations_csv(const std::string& path, bool labels_inline) {
    return parse_csv(path, slurp(path), labels_inline);
}

ActivationMatrix read_activations_binary(const std::string& path) { return parse_binary(path, slurp(path)); }

ActivationMatrix read_activations(const std::string& path, bool labels_inline) {
    const std::string bytes = slurp(path);
    if (bytes.compare(0, kMagicLen, kMagic) == 0) {
        if (labels_inline) {
            bad_file(path, "binary activation files carry no labels");
        }
        return parse_binary(path, bytes);
    }
    return parse_csv(path, bytes, labels_inline);
}

void write_activations_csv(const std::string& path, const ActivationMatrix& acts) {
    validate_activations(acts);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError({path + ": cannot write file"});
    }
    char buf[32];
    for (Eigen::Index c = 0; c < acts.features(); ++c) {
        out << (c ? "," : "") << 'f' << c + 1;
    }
    out << (acts.labels ? ",label\n" : "\n");
    for (Eigen::Index r = 0; r < acts.tokens(); ++r) {
        for (Eigen::Index c = 0; c < acts.features(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", acts.values(r, c));
            out << (c ? "," : "") << buf;
        }
        if (acts.labels) {
            out << ',' << (*acts.labels)[static_cast<std::size_t>(r)] + 1;
        }
        out << '\n';
    }
}

void write_activations_binary(const std::string& path, const Matrix& values) {
    if (values.rows() > 0xffffffffLL || values.cols() > 0xffffffffLL) {
        throw ContractError("write_activations_binary: dimensions exceed 32 bits");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError({path + ": cannot write file"});
    }
    out.write(kMagic, kMagicLen);
    put_u32(out, static_cast<std::uint32_t>(values.rows()));
    put_u32(out, static_cast<std::uint32_t>(values.cols()));
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            put_f64(out, values(r, c));
        }
    }
}

}  // namespace moefn
