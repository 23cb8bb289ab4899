#include "proiso/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "proiso/train.hpp"

namespace proiso {

using nlohmann::json;

RatePair tpr_fpr(std::span<const index_t> predicted_poisoned,
                 const std::vector<std::uint8_t>& mask) {
    index_t n_true = 0;
    for (auto m : mask) n_true += m ? 1 : 0;
    const index_t n = index_t(mask.size());
    if (n_true == 0 || n_true == n)
        throw std::domain_error("ground-truth mask must contain both classes");

    index_t hit = 0, false_alarm = 0;
    for (index_t i : predicted_poisoned) {
        if (i < 0 || i >= n) throw std::domain_error("predicted index out of range");
        if (mask[std::size_t(i)])
            ++hit;
        else
            ++false_alarm;
    }
    return {double(hit) / double(n_true), double(false_alarm) / double(n - n_true)};
}

double attack_success_rate(const ConvNet& model, const PoisonedDataset& poisoned_test) {
    if (poisoned_test.n == 0) throw std::domain_error("empty poisoned test set");
    const std::vector<std::int32_t> preds = predict(model, poisoned_test);
    index_t hits = 0;
    for (auto p : preds) hits += (p == poisoned_test.spec.target_label) ? 1 : 0;
    return double(hits) / double(poisoned_test.n);
}

std::vector<index_t> loss_rank_baseline(const std::vector<float>& losses, double rate) {
    if (!(rate > 0.0 && rate < 1.0)) throw parameter_error("isolation rate must lie in (0, 1)");
    const index_t n = index_t(losses.size());
    const index_t want = index_t(std::floor(rate * double(n) + 1e-9));
    std::vector<index_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), index_t{0});
    std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
        if (losses[std::size_t(a)] != losses[std::size_t(b)])
            return losses[std::size_t(a)] < losses[std::size_t(b)];
        return a < b;
    });
    order.resize(std::size_t(want));
    std::sort(order.begin(), order.end());
    return order;
}

void DefenseReport::check_invariants() const {
    auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (!rate_ok(clean_accuracy) || !rate_ok(asr))
        throw consistency_error("report rates must lie in [0, 1]");
    if (final_tpr && !rate_ok(*final_tpr)) throw consistency_error("bad final TPR");
    if (final_fpr && !rate_ok(*final_fpr)) throw consistency_error("bad final FPR");
    if (trace_tpr.size() != trace_fpr.size())
        throw consistency_error("trace length mismatch");
}

std::string format_rate(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

void save_report(const DefenseReport& report, const std::filesystem::path& file) {
    report.check_invariants();
    json j;
    j["schema"] = "proiso.report";
    j["schema_version"] = 1;
    j["run_id"] = report.run_id;
    j["dataset_id"] = report.dataset_id;
    j["attack"] = report.attack;
    j["poison_rate"] = report.poison_rate;
    j["config"] = json::parse(report.config_json.empty() ? "{}" : report.config_json);
    auto rate_or_null = [](double r) { return r >= 0.0 ? json(r) : json(nullptr); };
    json trace = json::array();
    for (std::size_t t = 0; t < report.trace_tpr.size(); ++t)
        trace.push_back({{"t", t + 1},
                         {"tpr", rate_or_null(report.trace_tpr[t])},
                         {"fpr", rate_or_null(report.trace_fpr[t])}});
    j["isolation_trace"] = std::move(trace);
    j["final_tpr"] = report.final_tpr ? json(*report.final_tpr) : json(nullptr);
    j["final_fpr"] = report.final_fpr ? json(*report.final_fpr) : json(nullptr);
    j["clean_accuracy"] = report.clean_accuracy;
    j["asr"] = report.asr;
    j["stage_seconds"] = report.stage_seconds;
    std::ofstream out(file);
    if (!out) throw format_error("cannot write " + file.string());
    out << j.dump(2) << "\n";
}

DefenseReport load_report(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw format_error("cannot open " + file.string());
    try {
        json j;
        in >> j;
        if (j.at("schema").get<std::string>() != "proiso.report")
            throw format_error("not a report: " + file.string());
        if (j.at("schema_version").get<int>() != 1)
            throw format_error("report schema version unsupported: " + file.string());
        DefenseReport r;
        r.run_id = j.at("run_id").get<std::string>();
        r.dataset_id = j.at("dataset_id").get<std::string>();
        r.attack = j.at("attack").get<std::string>();
        r.poison_rate = j.at("poison_rate").get<double>();
        r.config_json = j.at("config").dump();
        for (const auto& e : j.at("isolation_trace")) {
            r.trace_tpr.push_back(e.at("tpr").is_null() ? -1.0 : e.at("tpr").get<double>());
            r.trace_fpr.push_back(e.at("fpr").is_null() ? -1.0 : e.at("fpr").get<double>());
        }
        if (!j.at("final_tpr").is_null()) r.final_tpr = j.at("final_tpr").get<double>();
        if (!j.at("final_fpr").is_null()) r.final_fpr = j.at("final_fpr").get<double>();
        r.clean_accuracy = j.at("clean_accuracy").get<double>();
        r.asr = j.at("asr").get<double>();
        r.stage_seconds = j.at("stage_seconds").get<std::map<std::string, double>>();
        r.check_invariants();
        return r;
    } catch (const json::exception& e) {
        throw format_error("bad report " + file.string() + ": " + e.what());
    }
}

std::string ComparisonTable::to_text() const {
    std::vector<std::size_t> widths(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) widths[c] = columns[c].size();
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c)
            widths[c] = std::max(widths[c], row[c].size());
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            os << row[c];
            if (c + 1 < row.size())
                os << std::string(widths[c] - row[c].size() + 2, ' ');
        }
        os << "\n";
    };
    emit(columns);
    std::size_t total = 0;
    for (std::size_t c = 0; c < widths.size(); ++c) total += widths[c] + (c + 1 < widths.size() ? 2 : 0);
    os << std::string(total, '-') << "\n";
    for (const auto& row : rows) emit(row);
    return os.str();
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            os << row[c];
            if (c + 1 < row.size()) os << ",";
        }
        os << "\n";
    };
    emit(columns);
    for (const auto& row : rows) emit(row);
    return os.str();
}

ComparisonTable compare_runs(const std::vector<DefenseReport>& reports) {
    if (reports.empty()) throw consistency_error("no reports to compare");
    for (const auto& r : reports) {
        r.check_invariants();
        if (r.dataset_id != reports.front().dataset_id)
            throw consistency_error("reports come from different datasets");
    }
    ComparisonTable table;
    table.columns = {"run", "attack", "rate%", "TPR%", "FPR%", "CA%", "ASR%"};
    for (const auto& r : reports) {
        table.rows.push_back({r.run_id, r.attack, format_rate(r.poison_rate),
                              r.final_tpr ? format_rate(*r.final_tpr) : "n/a",
                              r.final_fpr ? format_rate(*r.final_fpr) : "n/a",
                              format_rate(r.clean_accuracy), format_rate(r.asr)});
    }
    return table;
}

}  // namespace proiso
