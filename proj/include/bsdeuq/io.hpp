#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

// Plot-data emission: whitespace-separated columns with a '#' header naming
// the columns and carrying the config hash and base seed, so re-runs with the
// same inputs are byte-identical.

namespace bsdeuq {

inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline std::string config_hash(const nlohmann::json& config) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

// Full-precision, round-trip exact decimal formatting.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class DatWriter {
public:
    explicit DatWriter(const std::string& path) : out_(path, std::ios::trunc) {
        if (!out_) throw std::runtime_error("DatWriter: cannot write " + path);
    }

    void meta(const std::string& name, const std::string& value) {
        out_ << "# " << name << ": " << value << "\n";
    }

    void columns(const std::vector<std::string>& names) {
        out_ << "# columns:";
        for (const auto& n : names) out_ << ' ' << n;
        out_ << "\n";
    }

    void row(std::span<const double> values) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i > 0) out_ << ' ';
            out_ << format_double(values[i]);
        }
        out_ << "\n";
    }

private:
    std::ofstream out_;
};

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

} // namespace bsdeuq
