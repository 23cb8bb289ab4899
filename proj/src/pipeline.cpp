#include "proiso/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>

#include <Eigen/Core>
#include <json.hpp>

#include "proiso/attacks.hpp"
#include "proiso/train.hpp"

namespace proiso {

using nlohmann::json;

namespace {

json data_to_json(const DataConfig& d) {
    return {{"source", d.source},   {"cifar_dir", d.cifar_dir.string()},
            {"train_n", d.train_n}, {"test_n", d.test_n},
            {"num_classes", d.num_classes}, {"channels", d.channels},
            {"height", d.height},   {"width", d.width}};
}

DataConfig data_from_json(const json& j) {
    DataConfig d;
    d.source = j.value("source", d.source);
    d.cifar_dir = j.value("cifar_dir", std::string());
    d.train_n = j.value("train_n", d.train_n);
    d.test_n = j.value("test_n", d.test_n);
    d.num_classes = j.value("num_classes", d.num_classes);
    d.channels = j.value("channels", d.channels);
    d.height = j.value("height", d.height);
    d.width = j.value("width", d.width);
    return d;
}

json poison_to_json(const PoisonSpec& s) {
    return {{"attack_kind", to_string(s.attack_kind)},
            {"poison_rate", s.poison_rate},
            {"target_label", s.target_label},
            {"rng_seed", s.rng_seed},
            {"badnets",
             {{"patch_h", s.badnets.patch_h},
              {"patch_w", s.badnets.patch_w},
              {"top", s.badnets.top},
              {"left", s.badnets.left},
              {"pixel_value", s.badnets.pixel_value}}},
            {"blended", {{"alpha", s.blended.alpha}}},
            {"sig", {{"amplitude", s.sig.amplitude}, {"frequency", s.sig.frequency}}}};
}

PoisonSpec poison_from_json(const json& j) {
    PoisonSpec s;
    if (j.contains("attack_kind"))
        s.attack_kind = attack_kind_from_string(j.at("attack_kind").get<std::string>());
    s.poison_rate = j.value("poison_rate", s.poison_rate);
    s.target_label = j.value("target_label", s.target_label);
    s.rng_seed = j.value("rng_seed", s.rng_seed);
    if (j.contains("badnets")) {
        const json& b = j.at("badnets");
        s.badnets.patch_h = b.value("patch_h", s.badnets.patch_h);
        s.badnets.patch_w = b.value("patch_w", s.badnets.patch_w);
        s.badnets.top = b.value("top", s.badnets.top);
        s.badnets.left = b.value("left", s.badnets.left);
        s.badnets.pixel_value = b.value("pixel_value", s.badnets.pixel_value);
    }
    if (j.contains("blended")) s.blended.alpha = j.at("blended").value("alpha", s.blended.alpha);
    if (j.contains("sig")) {
        s.sig.amplitude = j.at("sig").value("amplitude", s.sig.amplitude);
        s.sig.frequency = j.at("sig").value("frequency", s.sig.frequency);
    }
    return s;
}

json train_to_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"lr_schedule", to_string(t.lr_schedule)},
            {"rng_seed", t.rng_seed},
            {"augment_flip", t.augment_flip},
            {"augment_crop", t.augment_crop},
            {"crop_padding", t.crop_padding}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.momentum = j.value("momentum", t.momentum);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    if (j.contains("lr_schedule"))
        t.lr_schedule = lr_schedule_from_string(j.at("lr_schedule").get<std::string>());
    t.rng_seed = j.value("rng_seed", t.rng_seed);
    t.augment_flip = j.value("augment_flip", t.augment_flip);
    t.augment_crop = j.value("augment_crop", t.augment_crop);
    t.crop_padding = j.value("crop_padding", t.crop_padding);
    return t;
}

json pre_to_json(const PreIsolationConfig& p) {
    return {{"gamma", p.gamma}, {"epochs", p.epochs}, {"p", p.p}, {"q", p.q},
            {"rng_seed", p.rng_seed}, {"optim", train_to_json(p.optim)}};
}

PreIsolationConfig pre_from_json(const json& j) {
    PreIsolationConfig p;
    p.gamma = j.value("gamma", p.gamma);
    p.epochs = j.value("epochs", p.epochs);
    p.p = j.value("p", p.p);
    p.q = j.value("q", p.q);
    p.rng_seed = j.value("rng_seed", p.rng_seed);
    if (j.contains("optim")) p.optim = train_from_json(j.at("optim"));
    return p;
}

json isolation_to_json(const IsolationConfig& i) {
    return {{"beta", i.beta},
            {"k_per_layer", i.k_per_layer},
            {"iterations", i.iterations},
            {"pooling", to_string(i.pooling)},
            {"cluster", to_string(i.cluster)},
            {"rng_seed", i.rng_seed}};
}

IsolationConfig isolation_from_json(const json& j) {
    IsolationConfig i;
    i.beta = j.value("beta", i.beta);
    i.k_per_layer = j.value("k_per_layer", i.k_per_layer);
    i.iterations = j.value("iterations", i.iterations);
    if (j.contains("pooling")) i.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    if (j.contains("cluster"))
        i.cluster = cluster_method_from_string(j.at("cluster").get<std::string>());
    i.rng_seed = j.value("rng_seed", i.rng_seed);
    return i;
}

json selective_to_json(const SelectiveTrainConfig& s) {
    return {{"lambda", s.lambda}, {"epochs", s.epochs}, {"optim", train_to_json(s.optim)}};
}

SelectiveTrainConfig selective_from_json(const json& j) {
    SelectiveTrainConfig s;
    s.lambda = j.value("lambda", s.lambda);
    s.epochs = j.value("epochs", s.epochs);
    if (j.contains("optim")) s.optim = train_from_json(j.at("optim"));
    return s;
}

json config_to_json(const ExperimentConfig& c) {
    return {{"schema", "proiso.experiment"},
            {"schema_version", 1},
            {"data", data_to_json(c.data)},
            {"poison", poison_to_json(c.poison)},
            {"train", train_to_json(c.train)},
            {"pre_isolation", pre_to_json(c.pre)},
            {"isolation", isolation_to_json(c.isolation)},
            {"selective", selective_to_json(c.selective)},
            {"arch_channels", c.arch_channels},
            {"output_dir", c.output_dir.string()},
            {"global_seed", c.global_seed},
            {"run_id", c.run_id}};
}

std::string hash_of(const json& j) { return to_hex(fnv1a64(j.dump())); }

std::string chain(const std::string& upstream, const json& j) {
    return to_hex(fnv1a64(j.dump(), fnv1a64(upstream)));
}

// A stage marker records the cache key its artifacts were built under.
bool stage_fresh(const std::filesystem::path& marker, const std::string& key) {
    std::ifstream in(marker);
    if (!in) return false;
    try {
        json j;
        in >> j;
        return j.value("cache_key", "") == key;
    } catch (...) {
        return false;
    }
}

void write_stage_marker(const std::filesystem::path& marker, const std::string& key) {
    std::filesystem::create_directories(marker.parent_path());
    std::ofstream out(marker);
    if (!out) throw format_error("cannot write " + marker.string());
    out << json{{"cache_key", key}}.dump(2) << "\n";
}

void write_raw_f32(const std::filesystem::path& file, const std::vector<float>& v) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw format_error("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(v.size() * sizeof(float)));
}

std::vector<float> read_raw_f32(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw format_error("cannot open " + file.string());
    const auto bytes = std::size_t(in.tellg());
    if (bytes % sizeof(float) != 0) throw format_error("truncated " + file.string());
    std::vector<float> v(bytes / sizeof(float));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(bytes));
    return v;
}

}  // namespace

void DataConfig::validate() const {
    if (source != "synthetic" && source != "cifar10")
        throw config_error("unknown data source: " + source);
    if (train_n < 10 || test_n < 10) throw config_error("splits too small");
    if (num_classes < 2) throw config_error("need at least two classes");
}

void ExperimentConfig::validate() const {
    data.validate();
    poison.validate(data.num_classes);
    train.validate();
    pre.validate();
    selective.validate();
    if (arch_channels.empty()) throw config_error("arch_channels must be non-empty");
    isolation.validate(arch_channels);
    if (run_id.empty()) throw config_error("run_id must be non-empty");
}

std::string ExperimentConfig::to_json() const { return config_to_json(*this).dump(2); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw format_error(std::string("bad experiment config: ") + e.what());
    }
    try {
        if (j.value("schema", "proiso.experiment") != "proiso.experiment")
            throw format_error("not an experiment config");
        if (j.value("schema_version", 1) != 1)
            throw format_error("experiment config schema version unsupported");
        ExperimentConfig c;
        if (j.contains("data")) c.data = data_from_json(j.at("data"));
        if (j.contains("poison")) c.poison = poison_from_json(j.at("poison"));
        if (j.contains("train")) c.train = train_from_json(j.at("train"));
        if (j.contains("pre_isolation")) c.pre = pre_from_json(j.at("pre_isolation"));
        if (j.contains("isolation")) c.isolation = isolation_from_json(j.at("isolation"));
        if (j.contains("selective")) c.selective = selective_from_json(j.at("selective"));
        c.arch_channels = j.value("arch_channels", c.arch_channels);
        c.output_dir = j.value("output_dir", c.output_dir.string());
        c.global_seed = j.value("global_seed", c.global_seed);
        c.run_id = j.value("run_id", c.run_id);
        return c;
    } catch (const json::exception& e) {
        throw format_error(std::string("bad experiment config: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw format_error("cannot open config " + file.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void ExperimentConfig::save(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw format_error("cannot write config " + file.string());
    out << to_json() << "\n";
}

std::string ExperimentConfig::dataset_identity() const {
    json j = data_to_json(data);
    j["global_seed"] = global_seed;
    return hash_of(j);
}

void apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* dir = std::getenv("PROISO_OUTPUT_DIR"); dir && *dir)
        cfg.output_dir = dir;
}

void configure_threads_from_env() {
    if (const char* t = std::getenv("PROISO_THREADS"); t && *t) {
        const int n = std::atoi(t);
        if (n > 0) Eigen::setNbThreads(n);
    }
}

namespace {

// Resolved seeds: one global seed drives every stage-specific stream.
struct Resolved {
    ExperimentConfig cfg;

    explicit Resolved(const ExperimentConfig& base) : cfg(base) {
        cfg.poison.rng_seed = derive_seed(cfg.global_seed, 12);
        cfg.train.rng_seed = derive_seed(cfg.global_seed, 13);
        cfg.pre.rng_seed = derive_seed(cfg.global_seed, 14);
        cfg.pre.optim.rng_seed = cfg.pre.rng_seed;
        cfg.selective.optim.rng_seed = derive_seed(cfg.global_seed, 15);
        cfg.isolation.rng_seed = derive_seed(cfg.global_seed, 16);
        cfg.validate();
    }
};

struct StageTimer {
    std::map<std::string, double>& sink;
    std::string name;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    ~StageTimer() {
        sink[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

struct PipelineCtx {
    ExperimentConfig cfg;  // resolved
    std::filesystem::path out;
    std::map<std::string, double> seconds;

    std::string key_data, key_pre, key_bank, key_trace, key_final;

    explicit PipelineCtx(const ExperimentConfig& base) : cfg(Resolved(base).cfg) {
        out = cfg.output_dir;
        std::filesystem::create_directories(out);
        json jdata = data_to_json(cfg.data);
        jdata["global_seed"] = cfg.global_seed;
        jdata["poison"] = poison_to_json(cfg.poison);
        key_data = hash_of(jdata);
        json jpre = pre_to_json(cfg.pre);
        jpre["arch_channels"] = cfg.arch_channels;
        key_pre = chain(key_data, jpre);
        key_bank = chain(key_pre, json{{"pooling", to_string(cfg.isolation.pooling)}});
        key_trace = chain(key_bank, isolation_to_json(cfg.isolation));
        key_final = chain(key_trace, selective_to_json(cfg.selective));
    }

    ArchDescriptor arch() const {
        ArchDescriptor a;
        a.in_channels = cfg.data.channels;
        a.in_h = cfg.data.height;
        a.in_w = cfg.data.width;
        a.block_channels = cfg.arch_channels;
        a.num_classes = cfg.data.num_classes;
        return a;
    }

    CleanDataset clean_split(bool train_split) const {
        if (cfg.data.source == "synthetic") {
            SynthConfig sc;
            sc.n = train_split ? cfg.data.train_n : cfg.data.test_n;
            sc.num_classes = cfg.data.num_classes;
            sc.channels = cfg.data.channels;
            sc.height = cfg.data.height;
            sc.width = cfg.data.width;
            sc.seed = derive_seed(cfg.global_seed, train_split ? 10 : 11);
            return make_synthetic_dataset(sc);
        }
        CleanDataset ds = load_cifar10(cfg.data.cifar_dir, train_split,
                                       train_split ? cfg.data.train_n : cfg.data.test_n);
        return ds;
    }

    // --- stage: data ------------------------------------------------------
    void ensure_data() {
        StageTimer timer{seconds, "data"};
        const auto marker = out / "data" / "stage.json";
        if (stage_fresh(marker, key_data)) return;
        try {
            const CleanDataset clean_train = clean_split(true);
            const CleanDataset clean_test = clean_split(false);
            save_dataset(build_poisoned_dataset(clean_train, cfg.poison), out / "data" / "train");
            save_dataset(wrap_clean(clean_test, Split::clean_test), out / "data" / "clean_test");
            save_dataset(build_poisoned_testset(clean_test, cfg.poison),
                         out / "data" / "poisoned_test");
            write_stage_marker(marker, key_data);
        } catch (const std::exception& e) {
            throw stage_error("data", e.what());
        }
    }

    PoisonedDataset train_set() { return load_dataset(out / "data" / "train"); }
    PoisonedDataset clean_test_set() { return load_dataset(out / "data" / "clean_test"); }
    PoisonedDataset poisoned_test_set() { return load_dataset(out / "data" / "poisoned_test"); }

    // --- stage: pre-isolation ---------------------------------------------
    void ensure_pre(const PoisonedDataset& train) {
        StageTimer timer{seconds, "pre_isolate"};
        const auto marker = out / "pre" / "stage.json";
        if (stage_fresh(marker, key_pre)) return;
        try {
            ConvNet model(arch(), derive_seed(cfg.global_seed, 20));
            auto [lga_model, losses] = train_lga(std::move(model), train, cfg.pre);
            const SeedSubsets seeds = select_subsets(losses, cfg.pre);
            std::filesystem::create_directories(out / "models");
            std::filesystem::create_directories(out / "pre");
            lga_model.save(out / "models" / "lga.ckpt");
            write_raw_f32(out / "pre" / "losses.f32", losses);
            save_seed_subsets(seeds, cfg.pre, out / "pre" / "seeds.json");
            write_stage_marker(marker, key_pre);
        } catch (const std::exception& e) {
            throw stage_error("pre_isolate", e.what());
        }
    }

    // --- stage: feature extraction ------------------------------------------
    void ensure_bank(const PoisonedDataset& train) {
        StageTimer timer{seconds, "extract"};
        const auto marker = out / "features" / "stage.json";
        if (stage_fresh(marker, key_bank)) return;
        try {
            const ConvNet model = ConvNet::load(out / "models" / "lga.ckpt");
            const FeatureBank bank = extract_features(model, train, cfg.isolation.pooling);
            save_feature_bank(bank, out / "features");
            write_stage_marker(marker, key_bank);
        } catch (const std::exception& e) {
            throw stage_error("extract", e.what());
        }
    }

    // --- stage: progressive isolation ---------------------------------------
    void ensure_trace(const PoisonedDataset& train) {
        StageTimer timer{seconds, "isolate"};
        const auto marker = out / "isolation" / "stage.json";
        if (stage_fresh(marker, key_trace)) return;
        try {
            const FeatureBank bank = load_feature_bank(out / "features");
            const SeedSubsets seeds = load_seed_subsets(out / "pre" / "seeds.json");
            const IsolationState state = progressive_isolate(
                bank, seeds.benign, seeds.poisoned, cfg.isolation, &train.poison_mask);
            std::filesystem::create_directories(out / "isolation");
            save_isolation_trace(state, cfg.isolation, out / "isolation" / "trace.json");
            write_stage_marker(marker, key_trace);
        } catch (const std::exception& e) {
            throw stage_error("isolate", e.what());
        }
    }

    // --- stage: selective training -------------------------------------------
    void ensure_final(const PoisonedDataset& train) {
        StageTimer timer{seconds, "defend"};
        const auto marker = out / "defend" / "stage.json";
        if (stage_fresh(marker, key_final)) return;
        try {
            const IsolationState state = load_isolation_trace(out / "isolation" / "trace.json");
            ConvNet model = ConvNet::load(out / "models" / "lga.ckpt");
            ConvNet final_model =
                train_selective(std::move(model), train, state.final_partition.benign,
                                state.final_partition.poisoned, cfg.selective);
            final_model.save(out / "models" / "final.ckpt");
            write_stage_marker(marker, key_final);
        } catch (const std::exception& e) {
            throw stage_error("defend", e.what());
        }
    }
};

}  // namespace

DefenseReport run_pipeline(const ExperimentConfig& base) {
    PipelineCtx ctx(base);
    ctx.ensure_data();
    const PoisonedDataset train = ctx.train_set();
    ctx.ensure_pre(train);
    ctx.ensure_bank(train);
    ctx.ensure_trace(train);
    ctx.ensure_final(train);

    DefenseReport report;
    {
        StageTimer timer{ctx.seconds, "evaluate"};
        try {
            const ConvNet final_model = ConvNet::load(ctx.out / "models" / "final.ckpt");
            const IsolationState state =
                load_isolation_trace(ctx.out / "isolation" / "trace.json");

            report.run_id = ctx.cfg.run_id;
            report.dataset_id = ctx.cfg.dataset_identity();
            report.attack = to_string(ctx.cfg.poison.attack_kind);
            report.poison_rate = ctx.cfg.poison.poison_rate;
            report.config_json = ctx.cfg.to_json();
            for (const auto& rec : state.trace) {
                report.trace_tpr.push_back(rec.tpr);
                report.trace_fpr.push_back(rec.fpr);
            }
            if (!state.trace.empty() && state.trace.back().tpr >= 0.0) {
                report.final_tpr = state.trace.back().tpr;
                report.final_fpr = state.trace.back().fpr;
            }
            report.clean_accuracy = evaluate(final_model, ctx.clean_test_set());
            report.asr = attack_success_rate(final_model, ctx.poisoned_test_set());
        } catch (const std::exception& e) {
            throw stage_error("evaluate", e.what());
        }
    }
    report.stage_seconds = ctx.seconds;
    save_report(report, ctx.out / "report.json");
    {
        std::ofstream csv(ctx.out / "report.csv");
        csv << compare_runs({report}).to_csv();
    }
    return report;
}

std::string to_string(AblationKind kind) {
    switch (kind) {
        case AblationKind::fault_ratio: return "fault_ratio";
        case AblationKind::iterations: return "iterations";
        case AblationKind::poison_rate: return "poison_rate";
        case AblationKind::clustering: return "clustering";
        case AblationKind::pooling: return "pooling";
        case AblationKind::k_sweep: return "k_sweep";
        case AblationKind::lambda_sweep: return "lambda_sweep";
    }
    throw parameter_error("unknown ablation kind");
}

AblationKind ablation_kind_from_string(const std::string& name) {
    for (AblationKind k : {AblationKind::fault_ratio, AblationKind::iterations,
                           AblationKind::poison_rate, AblationKind::clustering,
                           AblationKind::pooling, AblationKind::k_sweep,
                           AblationKind::lambda_sweep})
        if (to_string(k) == name) return k;
    throw parameter_error("unknown ablation kind: " + name);
}

namespace {

void write_csv(const std::filesystem::path& file, const ComparisonTable& table) {
    std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw format_error("cannot write " + file.string());
    out << table.to_csv();
}

// Minimal line plot; the CSV sidecar carries the raw numbers.
void write_line_plot_svg(const std::filesystem::path& file, const std::string& title,
                         const std::string& y_label,
                         const std::vector<std::pair<double, double>>& points) {
    const int W = 520, H = 360, ml = 60, mr = 20, mt = 40, mb = 45;
    double xmin = points.front().first, xmax = points.front().first;
    double ymin = 0.0, ymax = 0.0;
    for (auto [x, y] : points) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymax = std::max(ymax, y);
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    ymax *= 1.1;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    std::ofstream out(file);
    if (!out) throw format_error("cannot write " + file.string());
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
        << "</text>\n";
    out << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
        << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
        << "' stroke='black'/>\n";
    out << "<text x='" << W / 2 << "' y='" << H - 10
        << "' text-anchor='middle' font-size='12'>iteration t</text>\n";
    out << "<text x='15' y='" << H / 2 << "' font-size='12' transform='rotate(-90 15 " << H / 2
        << ")' text-anchor='middle'>" << y_label << "</text>\n";
    out << "<polyline fill='none' stroke='#1f77b4' stroke-width='2' points='";
    for (auto [x, y] : points) out << px(x) << "," << py(y) << " ";
    out << "'/>\n";
    for (auto [x, y] : points) {
        out << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3' fill='#1f77b4'/>\n";
        out << "<text x='" << px(x) << "' y='" << H - mb + 16 << "' text-anchor='middle' font-size='11'>"
            << int(x) << "</text>\n";
    }
    out << "</svg>\n";
}

std::string pct(double rate) { return rate >= 0.0 ? format_rate(rate) : "n/a"; }

}  // namespace

ComparisonTable run_ablation(AblationKind kind, const ExperimentConfig& base) {
    PipelineCtx ctx(base);
    ctx.ensure_data();
    const PoisonedDataset train = ctx.train_set();
    const auto abl_dir = ctx.out / "ablations";
    ComparisonTable table;

    switch (kind) {
        case AblationKind::fault_ratio: {
            // Replace part of the seed poisoned subset with benign samples,
            // reusing the trained extractor and feature bank.
            ctx.ensure_pre(train);
            ctx.ensure_bank(train);
            const FeatureBank bank = load_feature_bank(ctx.out / "features");
            const SeedSubsets seeds = load_seed_subsets(ctx.out / "pre" / "seeds.json");
            table.columns = {"fault_ratio%", "TPR%", "FPR%"};
            std::mt19937_64 rng(derive_seed(ctx.cfg.global_seed, 30));
            for (double ratio : {0.2, 0.4, 0.6, 0.8}) {
                std::vector<index_t> contaminated = seeds.poisoned;
                const std::size_t n_replace =
                    std::size_t(std::llround(ratio * double(contaminated.size())));
                std::vector<index_t> benign_pool_gt;
                std::vector<std::uint8_t> taken(std::size_t(train.n), 0);
                for (index_t i : contaminated) taken[std::size_t(i)] = 1;
                for (index_t i : seeds.benign) taken[std::size_t(i)] = 1;
                for (index_t i = 0; i < train.n; ++i)
                    if (!train.poison_mask[std::size_t(i)] && !taken[std::size_t(i)])
                        benign_pool_gt.push_back(i);
                fisher_yates_shuffle(benign_pool_gt, rng);
                for (std::size_t k = 0; k < n_replace && k < contaminated.size(); ++k)
                    contaminated[k] = benign_pool_gt[k];
                std::sort(contaminated.begin(), contaminated.end());

                const IsolationState state = progressive_isolate(
                    bank, seeds.benign, contaminated, ctx.cfg.isolation, &train.poison_mask);
                const auto& last = state.trace.back();
                table.rows.push_back({format_rate(ratio), pct(last.tpr), pct(last.fpr)});
            }
            break;
        }
        case AblationKind::iterations: {
            ctx.ensure_pre(train);
            ctx.ensure_bank(train);
            ctx.ensure_trace(train);
            const IsolationState state =
                load_isolation_trace(ctx.out / "isolation" / "trace.json");
            table.columns = {"t", "TPR%", "FPR%", "pool_size"};
            std::vector<std::pair<double, double>> curve;
            for (const auto& rec : state.trace) {
                table.rows.push_back({std::to_string(rec.t), pct(rec.tpr), pct(rec.fpr),
                                      std::to_string(rec.pool_size)});
                if (rec.fpr >= 0.0) curve.push_back({double(rec.t), rec.fpr * 100.0});
            }
            if (!curve.empty())
                write_line_plot_svg(abl_dir / "iterations_fpr.svg",
                                    "false positive rate per isolation round", "FPR (%)", curve);
            break;
        }
        case AblationKind::poison_rate: {
            table.columns = {"poison_rate%", "TPR%", "FPR%"};
            for (double rate : {0.05, 0.20}) {
                ExperimentConfig sub = base;
                sub.poison.poison_rate = rate;
                sub.output_dir = ctx.out / "ablations" / ("rate_" + format_rate(rate));
                sub.run_id = base.run_id + "-rate" + format_rate(rate);
                PipelineCtx sctx(sub);
                sctx.ensure_data();
                const PoisonedDataset strain = sctx.train_set();
                sctx.ensure_pre(strain);
                sctx.ensure_bank(strain);
                sctx.ensure_trace(strain);
                const IsolationState state =
                    load_isolation_trace(sctx.out / "isolation" / "trace.json");
                const auto& last = state.trace.back();
                table.rows.push_back({format_rate(rate), pct(last.tpr), pct(last.fpr)});
            }
            break;
        }
        case AblationKind::clustering: {
            ctx.ensure_pre(train);
            ctx.ensure_bank(train);
            const FeatureBank bank = load_feature_bank(ctx.out / "features");
            const SeedSubsets seeds = load_seed_subsets(ctx.out / "pre" / "seeds.json");
            table.columns = {"cluster", "TPR%", "FPR%"};
            for (ClusterMethod m : {ClusterMethod::fisher_jenks, ClusterMethod::kmeans,
                                    ClusterMethod::bisecting_kmeans,
                                    ClusterMethod::minibatch_kmeans}) {
                IsolationConfig icfg = ctx.cfg.isolation;
                icfg.cluster = m;
                const IsolationState state = progressive_isolate(bank, seeds.benign,
                                                                 seeds.poisoned, icfg,
                                                                 &train.poison_mask);
                const auto& last = state.trace.back();
                table.rows.push_back({to_string(m), pct(last.tpr), pct(last.fpr)});
            }
            break;
        }
        case AblationKind::pooling: {
            ctx.ensure_pre(train);
            const ConvNet model = ConvNet::load(ctx.out / "models" / "lga.ckpt");
            const SeedSubsets seeds = load_seed_subsets(ctx.out / "pre" / "seeds.json");
            table.columns = {"pooling", "TPR%", "FPR%"};
            for (Pooling p : {Pooling::spatial_max, Pooling::spatial_mean}) {
                const FeatureBank bank = extract_features(model, train, p);
                IsolationConfig icfg = ctx.cfg.isolation;
                icfg.pooling = p;
                const IsolationState state = progressive_isolate(bank, seeds.benign,
                                                                 seeds.poisoned, icfg,
                                                                 &train.poison_mask);
                const auto& last = state.trace.back();
                table.rows.push_back({to_string(p), pct(last.tpr), pct(last.fpr)});
            }
            break;
        }
        case AblationKind::k_sweep: {
            ctx.ensure_pre(train);
            ctx.ensure_bank(train);
            const FeatureBank bank = load_feature_bank(ctx.out / "features");
            const SeedSubsets seeds = load_seed_subsets(ctx.out / "pre" / "seeds.json");
            table.columns = {"k_per_layer", "TPR%", "FPR%"};
            for (int k : {1, 2, 4}) {
                IsolationConfig icfg = ctx.cfg.isolation;
                icfg.k_per_layer = k;
                const IsolationState state = progressive_isolate(bank, seeds.benign,
                                                                 seeds.poisoned, icfg,
                                                                 &train.poison_mask);
                const auto& last = state.trace.back();
                table.rows.push_back({std::to_string(k), pct(last.tpr), pct(last.fpr)});
            }
            break;
        }
        case AblationKind::lambda_sweep: {
            ctx.ensure_pre(train);
            ctx.ensure_bank(train);
            ctx.ensure_trace(train);
            const IsolationState state =
                load_isolation_trace(ctx.out / "isolation" / "trace.json");
            const PoisonedDataset clean_test = ctx.clean_test_set();
            const PoisonedDataset poisoned_test = ctx.poisoned_test_set();
            table.columns = {"lambda", "CA%", "ASR%"};
            for (double lambda : {0.5, 1.0, 2.0}) {
                SelectiveTrainConfig scfg = ctx.cfg.selective;
                scfg.lambda = lambda;
                scfg.optim.rng_seed = derive_seed(ctx.cfg.global_seed, 15);
                ConvNet model = ConvNet::load(ctx.out / "models" / "lga.ckpt");
                const ConvNet final_model =
                    train_selective(std::move(model), train, state.final_partition.benign,
                                    state.final_partition.poisoned, scfg);
                char buf[16];
                std::snprintf(buf, sizeof(buf), "%.1f", lambda);
                table.rows.push_back({buf, format_rate(evaluate(final_model, clean_test)),
                                      format_rate(attack_success_rate(final_model, poisoned_test))});
            }
            break;
        }
    }

    write_csv(abl_dir / (to_string(kind) + ".csv"), table);
    {
        std::ofstream txt(abl_dir / (to_string(kind) + ".txt"));
        txt << table.to_text();
    }
    return table;
}

}  // namespace proiso
