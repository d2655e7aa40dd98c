#include "maskdeep/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace maskdeep {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

long parse_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long x = std::stol(v, &pos);
        check<ValidationError>(pos == v.size(), "");
        return x;
    } catch (...) {
        throw ValidationError("config field '" + key + "': expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        check<ValidationError>(pos == v.size(), "");
        return x;
    } catch (...) {
        throw ValidationError("config field '" + key + "': expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ValidationError("config field '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(static_cast<int>(parse_long(key, item)));
    }
    check<ValidationError>(!out.empty(), "config field '" + key + "': empty list");
    return out;
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    const char* section;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
    auto ints = [](const char* sec, int Config::*m) {
        return Field{sec,
                     [m](Config& c, const std::string& v) {
                         c.*m = static_cast<int>(parse_long("", v));
                     },
                     [m](const Config& c) { return std::to_string(c.*m); }};
    };
    auto dbls = [](const char* sec, double Config::*m) {
        return Field{sec, [m](Config& c, const std::string& v) { c.*m = parse_double("", v); },
                     [m](const Config& c) { return fmt_double(c.*m); }};
    };
    auto bools = [](const char* sec, bool Config::*m) {
        return Field{sec, [m](Config& c, const std::string& v) { c.*m = parse_bool("", v); },
                     [m](const Config& c) { return (c.*m) ? "true" : "false"; }};
    };
    auto strs = [](const char* sec, std::string Config::*m) {
        return Field{sec, [m](Config& c, const std::string& v) { c.*m = v; },
                     [m](const Config& c) { return c.*m; }};
    };
    auto u64s = [](const char* sec, std::uint64_t Config::*m) {
        return Field{sec,
                     [m](Config& c, const std::string& v) {
                         c.*m = static_cast<std::uint64_t>(parse_long("", v));
                     },
                     [m](const Config& c) { return std::to_string(c.*m); }};
    };

    static const std::vector<std::pair<std::string, Field>> table = {
        {"dataset", strs("dataset", &Config::dataset)},
        {"data_root", strs("dataset", &Config::data_root)},
        {"subset_size", ints("dataset", &Config::subset_size)},
        {"resolution", ints("dataset", &Config::resolution)},
        {"synth_seed", u64s("dataset", &Config::synth_seed)},
        {"synth_test_size", ints("dataset", &Config::synth_test_size)},
        {"widths",
         Field{"backbone",
               [](Config& c, const std::string& v) {
                   auto l = parse_int_list("widths", v);
                   check<ValidationError>(l.size() == 4,
                                          "config field 'widths': expected 4 values");
                   std::copy(l.begin(), l.end(), c.widths.begin());
               },
               [](const Config& c) {
                   return fmt_int_list({c.widths.begin(), c.widths.end()});
               }}},
        {"levels",
         Field{"hdm",
               [](Config& c, const std::string& v) { c.levels = parse_int_list("levels", v); },
               [](const Config& c) { return fmt_int_list(c.levels); }}},
        {"hdm_dim", ints("hdm", &Config::hdm_dim)},
        {"fpn_smooth", bools("hdm", &Config::fpn_smooth)},
        {"hierarchical", strs("hdm", &Config::hierarchical)},
        {"patch_count", ints("sampling", &Config::patch_count)},
        {"group_count", ints("sampling", &Config::group_count)},
        {"extra_targets", ints("sampling", &Config::extra_targets)},
        {"pred_hidden", ints("predictor", &Config::pred_hidden)},
        {"pred_out", ints("predictor", &Config::pred_out)},
        {"base_lr", dbls("optim", &Config::base_lr)},
        {"reference_batch", ints("optim", &Config::reference_batch)},
        {"weight_decay", dbls("optim", &Config::weight_decay)},
        {"sgd_momentum", dbls("optim", &Config::sgd_momentum)},
        {"batch_size", ints("optim", &Config::batch_size)},
        {"epochs", ints("optim", &Config::epochs)},
        {"warmup_epochs", ints("optim", &Config::warmup_epochs)},
        {"grad_clip", dbls("optim", &Config::grad_clip)},
        {"ema_lambda0", dbls("ema", &Config::ema_lambda0)},
        {"loss_reduction", strs("loss", &Config::loss_reduction)},
        {"momentum_bn_batch_stats", bools("backbone", &Config::momentum_bn_batch_stats)},
        {"log_interval", ints("trainer", &Config::log_interval)},
        {"ckpt_interval", ints("trainer", &Config::ckpt_interval)},
        {"pair_log_interval", ints("trainer", &Config::pair_log_interval)},
        {"probe_epochs", ints("probe", &Config::probe_epochs)},
        {"probe_lr", dbls("probe", &Config::probe_lr)},
        {"probe_reference_batch", ints("probe", &Config::probe_reference_batch)},
        {"probe_batch", ints("probe", &Config::probe_batch)},
        {"knn_k", ints("probe", &Config::knn_k)},
        {"ablate_seeds", ints("run", &Config::ablate_seeds)},
        {"seed", u64s("run", &Config::seed)},
    };
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& [k, f] : fields())
        if (k == key) return &f;
    return nullptr;
}

}  // namespace

bool is_config_field(const std::string& key) { return find_field(key) != nullptr; }

void set_config_field(Config& cfg, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    check<ValidationError>(f != nullptr, "unknown config field '" + key + "'");
    try {
        f->set(cfg, trim(value));
    } catch (const ValidationError& e) {
        if (std::string(e.what()).empty() || std::string(e.what()).find(key) == std::string::npos)
            throw ValidationError("config field '" + key + "': invalid value '" + value + "'");
        throw;
    }
}

std::string get_config_field(const Config& cfg, const std::string& key) {
    const Field* f = find_field(key);
    check<ValidationError>(f != nullptr, "unknown config field '" + key + "'");
    return f->get(cfg);
}

Config parse_config(const std::string& text) {
    Config cfg;
    std::set<std::string> seen;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') continue;  // section headers are cosmetic
        const auto eq = line.find('=');
        check<ValidationError>(eq != std::string::npos,
                               "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        check<ValidationError>(!seen.count(key), "duplicate config field '" + key + "'");
        seen.insert(key);
        set_config_field(cfg, key, value);
    }
    return cfg;
}

Config load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check<ConfigNotFound>(in.good(), "config file not found: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    Config cfg = parse_config(buf.str());
    validate_config(cfg);
    return cfg;
}

std::string serialize_config(const Config& cfg) {
    std::map<std::string, std::vector<std::string>> by_section;
    std::vector<std::string> section_order;
    for (const auto& [key, f] : fields()) {
        if (by_section.find(f.section) == by_section.end()) section_order.push_back(f.section);
        by_section[f.section].push_back(key + " = " + f.get(cfg));
    }
    std::string out;
    for (const auto& sec : section_order) {
        out += "[" + sec + "]\n";
        for (const auto& line : by_section[sec]) out += line + "\n";
        out += "\n";
    }
    return out;
}

void save_config(const Config& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check<DataError>(out.good(), "cannot write config to " + path);
    out << serialize_config(cfg);
}

void validate_config(const Config& cfg) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ValidationError("config field '" + field + "': " + why);
    };
    if (cfg.dataset != "cifar10" && cfg.dataset != "stl10" && cfg.dataset != "image_dir" &&
        cfg.dataset != "synthetic")
        fail("dataset", "must be one of cifar10/stl10/image_dir/synthetic");
    if (cfg.resolution <= 0 || cfg.resolution % 32 != 0)
        fail("resolution", "must be a positive multiple of 32");
    if (cfg.subset_size < 0) fail("subset_size", "must be >= 0");
    for (int w : cfg.widths)
        if (w <= 0) fail("widths", "stage widths must be positive");
    if (cfg.levels.empty()) fail("levels", "must be nonempty");
    if (!std::is_sorted(cfg.levels.begin(), cfg.levels.end())) fail("levels", "must be sorted");
    for (std::size_t i = 0; i + 1 < cfg.levels.size(); ++i)
        if (cfg.levels[i] == cfg.levels[i + 1]) fail("levels", "must be distinct");
    for (int l : cfg.levels)
        if (l < 2 || l > 5) fail("levels", "entries must lie in {2,3,4,5}");
    if (cfg.hdm_dim < 1) fail("hdm_dim", "must be >= 1");
    if (cfg.hierarchical != "on" && cfg.hierarchical != "naive")
        fail("hierarchical", "must be 'on' or 'naive'");
    if (cfg.patch_count < 1) fail("patch_count", "k must be >= 1");
    if (cfg.group_count < 1) fail("group_count", "K must be >= 1");
    if (cfg.extra_targets < 0) fail("extra_targets", "E must be >= 0");
    if (cfg.pred_hidden < 1) fail("pred_hidden", "must be >= 1");
    if (cfg.pred_out != cfg.widths[3])
        fail("pred_out", "predictor output dim must equal the global-descriptor dim (widths[3]=" +
                             std::to_string(cfg.widths[3]) + ")");
    if (cfg.base_lr <= 0) fail("base_lr", "must be > 0");
    if (cfg.reference_batch < 1) fail("reference_batch", "must be >= 1");
    if (cfg.weight_decay < 0) fail("weight_decay", "must be >= 0");
    if (cfg.sgd_momentum < 0 || cfg.sgd_momentum >= 1) fail("sgd_momentum", "must lie in [0,1)");
    if (cfg.batch_size < 2) fail("batch_size", "must be >= 2 (batch statistics)");
    if (cfg.epochs < 1) fail("epochs", "must be >= 1");
    if (cfg.warmup_epochs >= cfg.epochs) fail("warmup_epochs", "must be < epochs");
    if (cfg.grad_clip < 0) fail("grad_clip", "must be >= 0");
    if (cfg.ema_lambda0 < 0 || cfg.ema_lambda0 > 1) fail("ema_lambda0", "must lie in [0,1]");
    if (cfg.loss_reduction != "literal" && cfg.loss_reduction != "mean")
        fail("loss_reduction", "must be 'literal' or 'mean'");
    if (cfg.log_interval < 1) fail("log_interval", "must be >= 1");
    if (cfg.ckpt_interval < 0) fail("ckpt_interval", "must be >= 0");
    if (cfg.pair_log_interval < 0) fail("pair_log_interval", "must be >= 0");
    if (cfg.probe_epochs < 1) fail("probe_epochs", "must be >= 1");
    if (cfg.probe_lr <= 0) fail("probe_lr", "must be > 0");
    if (cfg.probe_batch < 2) fail("probe_batch", "must be >= 2");
    if (cfg.probe_reference_batch < 1) fail("probe_reference_batch", "must be >= 1");
    if (cfg.knn_k < 1) fail("knn_k", "must be >= 1");
    if (cfg.ablate_seeds < 1) fail("ablate_seeds", "must be >= 1");
    if (cfg.synth_test_size < 1) fail("synth_test_size", "must be >= 1");
}

std::vector<Config> ablation_grid(const Config& base, const std::string& axis,
                                  const std::vector<std::string>& values) {
    check<ValidationError>(is_config_field(axis), "unknown ablation axis '" + axis + "'");
    check<ValidationError>(!values.empty(), "ablation axis '" + axis + "' has no values");
    std::vector<Config> out;
    out.reserve(values.size());
    for (const auto& v : values) {
        Config cfg = base;
        set_config_field(cfg, axis, v);
        validate_config(cfg);
        out.push_back(std::move(cfg));
    }
    return out;
}

ModelSpec model_spec(const Config& cfg) {
    ModelSpec spec;
    spec.widths = cfg.widths;
    spec.levels = cfg.levels;
    spec.hdm_dim = cfg.hdm_dim;
    spec.fpn_smooth = cfg.fpn_smooth;
    spec.naive = cfg.naive();
    spec.patch_count = cfg.patch_count;
    spec.group_count = cfg.group_count;
    spec.extra_targets = cfg.extra_targets;
    spec.pred_hidden = cfg.pred_hidden;
    spec.pred_out = cfg.pred_out;
    spec.momentum_bn_batch_stats = cfg.momentum_bn_batch_stats;
    return spec;
}

}  // namespace maskdeep
