#include "cmp/run_config.hpp"

#include <fstream>
#include <sstream>

namespace cmp {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value for " + key + ": '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("config: bad boolean value for " + key + ": '" + value + "'");
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "table_size")
        grid.table_capacity = parse_u64(key, value);
    else if (key == "levels")
        grid.levels = static_cast<int>(parse_u64(key, value));
    else if (key == "feature_dim")
        grid.feature_dim = static_cast<int>(parse_u64(key, value));
    else if (key == "finest_cell")
        grid.finest_cell = parse_double(key, value);
    else if (key == "coarsest_cell")
        grid.coarsest_cell = parse_double(key, value);
    else if (key == "lr")
        opt.lr = parse_double(key, value);
    else if (key == "beta1")
        opt.beta1 = parse_double(key, value);
    else if (key == "beta2")
        opt.beta2 = parse_double(key, value);
    else if (key == "weight_decay")
        opt.weight_decay = parse_double(key, value);
    else if (key == "warmup_steps")
        warmup_steps = parse_u64(key, value);
    else if (key == "epochs")
        epochs = parse_u64(key, value);
    else if (key == "steps_per_epoch")
        steps_per_epoch = parse_u64(key, value);
    else if (key == "batch_size")
        batch_size = parse_u64(key, value);
    else if (key == "mask_ratio")
        mask_ratio = parse_double(key, value);
    else if (key == "mask_patch")
        mask_patch = parse_u64(key, value);
    else if (key == "probe_hidden")
        probe_hidden = parse_u64(key, value);
    else if (key == "binarized")
        binarized = parse_bool(key, value);
    else if (key == "jitter")
        jitter = parse_bool(key, value);
    else if (key == "eval_stride")
        eval_stride = parse_u64(key, value);
    else if (key == "seed")
        seed = parse_u64(key, value);
    else if (key == "area_m")
        area_m = parse_double(key, value);
    else if (key == "classes")
        classes = static_cast<int>(parse_u64(key, value));
    else if (key == "meters_per_cell")
        meters_per_cell = parse_double(key, value);
    else if (key == "class_weight_min")
        class_weight_min = parse_double(key, value);
    else if (key == "class_weight_max")
        class_weight_max = parse_double(key, value);
    else if (key == "traversal_radius")
        traversal_radius = parse_double(key, value);
    else
        throw ConfigError("config: unknown key '" + key + "'");
}

std::string RunConfig::resolved() const {
    std::ostringstream out;
    out << "table_size=" << grid.table_capacity << '\n'
        << "levels=" << grid.levels << '\n'
        << "feature_dim=" << grid.feature_dim << '\n'
        << "finest_cell=" << grid.finest_cell << '\n'
        << "coarsest_cell=" << grid.coarsest_cell << '\n'
        << "lr=" << opt.lr << '\n'
        << "beta1=" << opt.beta1 << '\n'
        << "beta2=" << opt.beta2 << '\n'
        << "weight_decay=" << opt.weight_decay << '\n'
        << "warmup_steps=" << warmup_steps << '\n'
        << "epochs=" << epochs << '\n'
        << "steps_per_epoch=" << steps_per_epoch << '\n'
        << "batch_size=" << batch_size << '\n'
        << "mask_ratio=" << mask_ratio << '\n'
        << "mask_patch=" << mask_patch << '\n'
        << "probe_hidden=" << probe_hidden << '\n'
        << "binarized=" << (binarized ? 1 : 0) << '\n'
        << "jitter=" << (jitter ? 1 : 0) << '\n'
        << "eval_stride=" << eval_stride << '\n'
        << "seed=" << seed << '\n'
        << "area_m=" << area_m << '\n'
        << "classes=" << classes << '\n'
        << "meters_per_cell=" << meters_per_cell << '\n'
        << "class_weight_min=" << class_weight_min << '\n'
        << "class_weight_max=" << class_weight_max << '\n'
        << "traversal_radius=" << traversal_radius << '\n';
    return out.str();
}

ReconstructionConfig RunConfig::reconstruction() const {
    ReconstructionConfig rc;
    rc.grid = grid;
    rc.probe_hidden = probe_hidden;
    rc.epochs = epochs;
    rc.steps_per_epoch = steps_per_epoch;
    rc.batch_size = batch_size;
    rc.opt = opt;
    rc.warmup_steps = warmup_steps;
    rc.binarized = binarized;
    rc.jitter = jitter;
    rc.class_weight_min = class_weight_min;
    rc.class_weight_max = class_weight_max;
    rc.eval_stride = eval_stride;
    rc.seed = seed;
    return rc;
}

SynthSpec RunConfig::synth() const {
    SynthSpec s;
    s.area_m = area_m;
    s.classes = classes;
    s.meters_per_cell = meters_per_cell;
    return s;
}

}  // namespace cmp
