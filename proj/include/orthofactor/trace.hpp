#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "orthofactor/csv.hpp"
#include "orthofactor/errors.hpp"

namespace orthofactor {

/// Append-only per-sweep record of named scalars. Sweep indices must be
/// strictly increasing; `thin` decides which sweeps are due.
class TraceStore {
public:
    TraceStore() = default;
    explicit TraceStore(std::vector<std::string> names, std::uint64_t thin = 1)
        : names_(std::move(names)), thin_(thin), series_(names_.size()) {
        if (thin_ < 1) throw ValidationError("trace thinning must be at least 1");
    }

    const std::vector<std::string>& names() const { return names_; }
    std::uint64_t thin() const { return thin_; }
    std::size_t size() const { return sweeps_.size(); }
    bool due(std::uint64_t sweep) const { return sweep % thin_ == 0; }

    void record(std::uint64_t sweep, std::span<const double> values) {
        if (values.size() != names_.size())
            throw ValidationError("trace record has " + std::to_string(values.size()) + " values, expected " +
                                  std::to_string(names_.size()));
        if (!sweeps_.empty() && sweep <= sweeps_.back())
            throw ValidationError("trace sweep indices must be strictly increasing");
        sweeps_.push_back(sweep);
        for (std::size_t i = 0; i < values.size(); ++i) series_[i].push_back(values[i]);
    }

    void record(std::uint64_t sweep, const std::vector<double>& values) {
        record(sweep, std::span<const double>(values.data(), values.size()));
    }

    const std::vector<std::uint64_t>& sweeps() const { return sweeps_; }
    const std::vector<double>& series(std::size_t i) const { return series_.at(i); }

    const std::vector<double>& series(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return series_[i];
        throw ValidationError("no trace named " + name);
    }

    /// trace_<name>.csv with columns sweep,value.
    void write(const std::filesystem::path& dir) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            CsvWriter w(dir / ("trace_" + names_[i] + ".csv"));
            w.header({"sweep", "value"});
            for (std::size_t t = 0; t < sweeps_.size(); ++t)
                w.line({std::to_string(sweeps_[t]), format_double(series_[i][t])});
            w.close();
        }
    }

    /// Reads back a trace_<name>.csv file.
    static std::pair<std::vector<std::uint64_t>, std::vector<double>> read(const std::filesystem::path& file) {
        const CsvMatrix m = read_matrix_csv(file, true);
        if (m.values.cols() != 2) throw IoError(file.string() + ": expected columns sweep,value");
        std::vector<std::uint64_t> s;
        std::vector<double> v;
        for (Index i = 0; i < m.values.rows(); ++i) {
            s.push_back(static_cast<std::uint64_t>(m.values(i, 0)));
            v.push_back(m.values(i, 1));
        }
        return {s, v};
    }

private:
    std::vector<std::string> names_;
    std::uint64_t thin_ = 1;
    std::vector<std::uint64_t> sweeps_;
    std::vector<std::vector<double>> series_;
};

}  // namespace orthofactor
