#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stability.hpp"

namespace lmnff {

using nlohmann::json;

// ----------------------------------------------------------------------------
// CSV datasets
// ----------------------------------------------------------------------------

/// Expected channel counts; zero entries are inferred from the header.
struct DatasetSchema {
    std::size_t inputs = 0;
    std::size_t disturbances = 0;
    std::size_t outputs = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    for (auto& c : cells) {
        const auto b = c.find_first_not_of(" \t\r");
        const auto e = c.find_last_not_of(" \t\r");
        c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
    }
    return cells;
}

inline double parse_cell(const std::string& s, std::size_t row, const std::string& column) {
    if (s.empty())
        throw SchemaError("empty cell in column '" + column + "' at row " + std::to_string(row));
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw SchemaError("cannot parse '" + s + "' in column '" + column + "' at row " +
                          std::to_string(row));
    }
    if (pos != s.size())
        throw SchemaError("cannot parse '" + s + "' in column '" + column + "' at row " +
                          std::to_string(row));
    if (!std::isfinite(v))
        throw SchemaError("non-finite value in column '" + column + "' at row " + std::to_string(row));
    return v;
}

/// Maps "u", "u1", "u2", ... to (prefix, index); index 0 for the bare alias.
inline std::optional<std::pair<char, std::size_t>> channel_of(const std::string& name) {
    if (name.empty() || (name[0] != 'u' && name[0] != 'd' && name[0] != 'y'))
        return std::nullopt;
    if (name.size() == 1)
        return std::make_pair(name[0], std::size_t{1});
    for (std::size_t i = 1; i < name.size(); ++i)
        if (name[i] < '0' || name[i] > '9')
            return std::nullopt;
    const auto idx = static_cast<std::size_t>(std::stoul(name.substr(1)));
    if (idx == 0)
        return std::nullopt;
    return std::make_pair(name[0], idx);
}

} // namespace detail

/// Reads a CSV dataset with header t,u1..,d1..,y1.. (plain u/d/y accepted for
/// a single channel). The sample period is inferred from t.
[[nodiscard]] inline TimeSeriesDataset parse_dataset(std::istream& in, const DatasetSchema& schema = {}) {
    std::string line;
    if (!std::getline(in, line))
        throw SchemaError("dataset is empty");
    const auto header = detail::split_csv_line(line);
    long tcol = -1;
    std::map<char, std::map<std::size_t, std::size_t>> cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "t") {
            tcol = static_cast<long>(c);
            continue;
        }
        if (auto ch = detail::channel_of(header[c])) {
            if (cols[ch->first].count(ch->second))
                throw SchemaError("duplicate column '" + header[c] + "'");
            cols[ch->first][ch->second] = c;
        }
    }
    if (tcol < 0)
        throw SchemaError("missing column 't'");
    auto count_of = [&](char p, std::size_t want) {
        const std::size_t n = std::max(want, cols[p].size());
        for (std::size_t i = 1; i <= n; ++i)
            if (!cols[p].count(i))
                throw SchemaError(std::string("missing column '") + p + std::to_string(i) + "'");
        return n;
    };
    const std::size_t du = count_of('u', schema.inputs);
    const std::size_t dd = count_of('d', schema.disturbances);
    const std::size_t dy = count_of('y', std::max<std::size_t>(schema.outputs, 1));

    TimeSeriesDataset ds;
    ds.u.resize(du);
    ds.d.resize(dd);
    ds.y.resize(dy);
    std::vector<double> t;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw SchemaError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(header.size()));
        t.push_back(detail::parse_cell(cells[static_cast<std::size_t>(tcol)], row, "t"));
        auto fill = [&](char p, std::vector<std::vector<double>>& dst) {
            for (std::size_t i = 0; i < dst.size(); ++i) {
                const std::size_t c = cols[p][i + 1];
                dst[i].push_back(detail::parse_cell(cells[c], row, header[c]));
            }
        };
        fill('u', ds.u);
        fill('d', ds.d);
        fill('y', ds.y);
    }
    if (t.empty())
        throw InsufficientDataError("dataset has no rows");
    if (t.size() >= 2) {
        const double period = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
        if (!(period > 0.0))
            throw SchemaError("time column must increase");
        for (std::size_t k = 1; k < t.size(); ++k)
            if (std::abs((t[k] - t[k - 1]) - period) > 0.01 * period)
                throw SchemaError("nonuniform sampling at row " + std::to_string(k + 1) +
                                  ": step " + std::to_string(t[k] - t[k - 1]) + " vs period " +
                                  std::to_string(period));
        ds.sample_period = period;
    }
    ds.validate();
    return ds;
}

[[nodiscard]] inline TimeSeriesDataset load_dataset(const std::filesystem::path& path,
                                                    const DatasetSchema& schema = {}) {
    std::ifstream in(path);
    if (!in)
        throw SchemaError("cannot open dataset '" + path.string() + "'");
    return parse_dataset(in, schema);
}

inline void write_dataset(std::ostream& out, const TimeSeriesDataset& ds) {
    out << "t";
    for (std::size_t i = 0; i < ds.u.size(); ++i)
        out << ",u" << i + 1;
    for (std::size_t i = 0; i < ds.d.size(); ++i)
        out << ",d" << i + 1;
    for (std::size_t i = 0; i < ds.y.size(); ++i)
        out << ",y" << i + 1;
    out << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < ds.length(); ++k) {
        out << static_cast<double>(k) * ds.sample_period;
        for (const auto* g : {&ds.u, &ds.d, &ds.y})
            for (const auto& ch : *g)
                out << ',' << ch[k];
        out << '\n';
    }
}

inline void save_dataset(const std::filesystem::path& path, const TimeSeriesDataset& ds) {
    std::ofstream out(path);
    if (!out)
        throw SchemaError("cannot write '" + path.string() + "'");
    write_dataset(out, ds);
}

/// Named columns of equal length written as CSV.
inline void write_columns_csv(const std::filesystem::path& path,
                              const std::vector<std::pair<std::string, std::vector<double>>>& columns) {
    std::ofstream out(path);
    if (!out)
        throw SchemaError("cannot write '" + path.string() + "'");
    std::size_t n = 0;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        out << (c ? "," : "") << columns[c].first;
        n = std::max(n, columns[c].second.size());
    }
    out << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            out << (c ? "," : "");
            if (k < columns[c].second.size())
                out << columns[c].second[k];
        }
        out << '\n';
    }
}

// ----------------------------------------------------------------------------
// Model store
// ----------------------------------------------------------------------------

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline json vec_json(const VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v[i]);
    return a;
}

inline VectorXd json_vec(const json& a) {
    if (!a.is_array())
        throw SchemaError("expected a numeric array");
    VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number())
            throw SchemaError("expected a numeric array");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

inline json mat_json(const MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        a.push_back(vec_json(m.row(r).transpose()));
    return a;
}

inline MatrixXd json_mat(const json& a) {
    if (!a.is_array())
        throw SchemaError("expected a matrix");
    if (a.empty())
        return MatrixXd(0, 0);
    const auto cols = static_cast<Eigen::Index>(a[0].size());
    MatrixXd m(static_cast<Eigen::Index>(a.size()), cols);
    for (std::size_t r = 0; r < a.size(); ++r) {
        const VectorXd row = json_vec(a[r]);
        if (row.size() != cols)
            throw SchemaError("ragged matrix");
        m.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return m;
}

inline json delay_sets_json(const std::vector<DelaySet>& sets) {
    json a = json::array();
    for (const auto& s : sets)
        a.push_back({{"lin", s.lin}, {"val", s.val}});
    return a;
}

inline std::vector<DelaySet> json_delay_sets(const json& a) {
    if (!a.is_array())
        throw SchemaError("delay sets must be an array");
    std::vector<DelaySet> out;
    for (const auto& s : a)
        out.push_back({s.at("lin").get<std::vector<int>>(), s.value("val", std::vector<int>{})});
    return out;
}

} // namespace detail

[[nodiscard]] inline json delays_to_json(const DelayConfig& d) {
    return {{"inputs", detail::delay_sets_json(d.inputs)},
            {"disturbances", detail::delay_sets_json(d.disturbances)},
            {"outputs", detail::delay_sets_json(d.outputs)}};
}

[[nodiscard]] inline DelayConfig delays_from_json(const json& j) {
    DelayConfig d;
    d.inputs = detail::json_delay_sets(j.at("inputs"));
    d.disturbances = detail::json_delay_sets(j.value("disturbances", json::array()));
    d.outputs = detail::json_delay_sets(j.at("outputs"));
    d.validate();
    return d;
}

[[nodiscard]] inline json model_to_json(const NarxModel& m) {
    json lms = json::array();
    const auto& net = m.net();
    for (std::size_t i = 0; i < net.size(); ++i)
        lms.push_back({{"offset", net.model(i).offset},
                       {"gains", detail::vec_json(net.model(i).gains)},
                       {"centers", detail::vec_json(net.validities()[i].centers)},
                       {"widths", detail::vec_json(net.validities()[i].widths)}});
    return {{"target", m.target()}, {"delays", delays_to_json(m.delays())}, {"local_models", lms}};
}

[[nodiscard]] inline NarxModel model_from_json(const json& j) {
    const DelayConfig d = delays_from_json(j.at("delays"));
    std::vector<LocalLinearModel> models;
    std::vector<ValidityFunction> vals;
    for (const auto& lm : j.at("local_models")) {
        models.push_back({lm.at("offset").get<double>(), detail::json_vec(lm.at("gains"))});
        vals.push_back({detail::json_vec(lm.at("centers")), detail::json_vec(lm.at("widths"))});
    }
    LocalModelNetwork net(std::move(models), std::move(vals), d.lin_dim(), d.val_dim());
    return NarxModel(std::move(net), d, j.value("target", std::size_t{0}));
}

[[nodiscard]] inline json certificate_to_json(const StabilityAssessment& a) {
    json j = {{"verdict", to_string(a.verdict)},
              {"reason", a.reason},
              {"relative_degree", a.relative_degree.delta},
              {"relative_degree_well_defined", a.relative_degree.well_defined},
              {"zero_dynamics", a.relative_degree.zero_dynamics}};
    if (a.poles) {
        json p = json::array();
        for (const auto& z : *a.poles)
            p.push_back({{"re", z.real()}, {"im", z.imag()}});
        j["poles"] = p;
    }
    if (a.certification && a.certification->certificate) {
        const auto& c = *a.certification->certificate;
        j["P"] = detail::mat_json(c.P);
        j["margin"] = std::isfinite(c.margin) ? json(c.margin) : json("inf");
        j["residuals"] = c.residuals;
    }
    return j;
}

struct ModelStore {
    LpvKind kind = LpvKind::Siso;
    std::vector<NarxModel> models;
    json metadata = json::object();
    std::optional<json> certificate;
};

[[nodiscard]] inline json store_to_json(const ModelStore& s) {
    json models = json::array();
    for (const auto& m : s.models)
        models.push_back(model_to_json(m));
    json j = {{"schema_version", kSchemaVersion},
              {"kind", to_string(s.kind)},
              {"models", models},
              {"metadata", s.metadata}};
    if (s.certificate)
        j["certificate"] = *s.certificate;
    return j;
}

[[nodiscard]] inline LpvKind lpv_kind_from_string(const std::string& s) {
    if (s == "siso")
        return LpvKind::Siso;
    if (s == "siso_disturbance")
        return LpvKind::SisoDisturbance;
    if (s == "mimo")
        return LpvKind::Mimo;
    throw SchemaError("unknown model kind '" + s + "'");
}

[[nodiscard]] inline ModelStore store_from_json(const json& j) {
    if (!j.is_object() || !j.contains("schema_version"))
        throw SchemaError("model store lacks a schema version");
    if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
        throw SchemaError("unsupported model store schema version " + j["schema_version"].dump());
    ModelStore s;
    try {
        s.kind = lpv_kind_from_string(j.at("kind").get<std::string>());
        for (const auto& m : j.at("models"))
            s.models.push_back(model_from_json(m));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed model store: ") + e.what());
    }
    if (s.models.empty())
        throw SchemaError("model store has no models");
    s.metadata = j.value("metadata", json::object());
    if (j.contains("certificate"))
        s.certificate = j["certificate"];
    return s;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out)
        throw SchemaError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

[[nodiscard]] inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw SchemaError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("invalid JSON in '" + path.string() + "': " + e.what());
    }
}

inline void save_store(const std::filesystem::path& path, const ModelStore& s) {
    write_json(path, store_to_json(s));
}

[[nodiscard]] inline ModelStore load_store(const std::filesystem::path& path) {
    return store_from_json(read_json(path));
}

/// 64-bit FNV-1a, hex encoded.
[[nodiscard]] inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

[[nodiscard]] inline std::string content_hash(const json& j) { return fnv1a_hex(j.dump()); }

} // namespace lmnff
