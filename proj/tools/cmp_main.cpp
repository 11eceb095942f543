#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmp/bench.hpp"
#include "cmp/harness.hpp"
#include "cmp/prior_store.hpp"
#include "cmp/quantize.hpp"
#include "cmp/run_config.hpp"

namespace {

using namespace cmp;

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void log_config(const RunConfig& cfg) {
    std::istringstream lines(cfg.resolved());
    std::string line;
    while (std::getline(lines, line)) std::cerr << "config: " << line << "\n";
}

int cmd_synth(const RunConfig& cfg, const std::string& out_path) {
    log_config(cfg);
    const RasterMap map = synth_map(cfg.seed, cfg.synth());
    save_raster_file(map, out_path);
    std::cerr << "synth: wrote " << map.width << "x" << map.height << " map (" << map.classes
              << " classes) to " << out_path << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& map_path, const std::string& out_path,
              const std::string& metrics_path) {
    log_config(cfg);
    const RasterMap map = load_raster_file(map_path);
    const ReconstructionResult res = train_reconstruction(map, cfg.reconstruction());

    const BinaryPriorStore store =
        freeze(res.model, {&res.probe.l1.w, &res.probe.l1.b, &res.probe.l2.w, &res.probe.l2.b});
    save_file(store, out_path);

    std::ostringstream csv;
    csv << "table_size,levels,feature_dim,binarized,seed,epochs,final_loss,miou";
    for (std::size_t c = 0; c < res.iou.per_class.size(); ++c) csv << ",iou_" << c;
    csv << "\n"
        << cfg.grid.table_capacity << ',' << cfg.grid.levels << ',' << cfg.grid.feature_dim << ','
        << (cfg.binarized ? 1 : 0) << ',' << cfg.seed << ',' << cfg.epochs << ','
        << res.epoch_loss.back() << ',' << res.iou.mean;
    for (double v : res.iou.per_class) csv << ',' << v;
    csv << "\n";
    if (metrics_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(metrics_path);
        if (!out) throw FormatError("train: cannot open metrics file " + metrics_path);
        out << csv.str();
    }
    std::cerr << "train: mIoU " << res.iou.mean << ", store written to " << out_path << "\n";
    return 0;
}

// Rebuilds the reconstruction probe from the store's extra-weight section.
ProbeWeights probe_from_store(const BinaryPriorStore& store) {
    const auto& extra = store.extra_arrays();
    if (extra.size() != 4) throw FormatError("eval: store carries no reconstruction probe");
    const std::size_t in = store.output_dim();
    const std::size_t hidden = extra[1].size();
    const std::size_t classes = extra[3].size();
    if (hidden == 0 || classes == 0 || extra[0].size() != hidden * in ||
        extra[2].size() != classes * hidden)
        throw FormatError("eval: probe array lengths are inconsistent");
    ProbeWeights probe = ProbeWeights::create(in, hidden, classes);
    auto fill = [](Tensor& t, const std::vector<float>& src) {
        for (std::size_t i = 0; i < src.size(); ++i) t.data[i] = src[i];
    };
    fill(probe.l1.w, extra[0]);
    fill(probe.l1.b, extra[1]);
    fill(probe.l2.w, extra[2]);
    fill(probe.l2.b, extra[3]);
    return probe;
}

// Store-backed prediction for eval: unpack the tables into a live model so
// the prediction path matches training bit-for-bit.
PriorModel model_from_store(const BinaryPriorStore& store) {
    PriorModel m;
    m.grid = HashGridParams::create_from_growth(
        store.table_capacity(), static_cast<int>(store.levels().size()), store.feature_dim(),
        store.finest_cell(), store.growth(), store.coverage());
    for (std::size_t l = 0; l < store.packed_tables().size(); ++l)
        m.grid.tables[l] = unpack_bits(store.packed_tables()[l]);
    m.mlp = store.mlp();
    return m;
}

int cmd_eval(const std::string& prior_path, const std::string& map_path) {
    const BinaryPriorStore store = load_file(prior_path);
    const RasterMap map = load_raster_file(map_path);
    const ProbeWeights probe = probe_from_store(store);
    const PriorModel model = model_from_store(store);
    const RasterMap pred = predict_map(model, probe, map, true);
    const IouReport rep = miou(pred, map);

    std::cout << "class,iou\n";
    for (std::size_t c = 0; c < rep.per_class.size(); ++c)
        std::cout << c << ',' << rep.per_class[c] << "\n";
    std::cout << "mean," << rep.mean << "\n";
    return 0;
}

int cmd_query(const std::string& prior_path, double x, double y) {
    const BinaryPriorStore store = load_file(prior_path);
    Tensor grid({1, 1, 2});
    grid.data = {x, y};
    if (!store.coverage().contains({x, y}))
        std::cerr << "warning: query point outside coverage, returning zero features\n";
    const Tensor feat = prior_features(store, grid, CoveragePolicy::kZero);
    for (std::size_t i = 0; i < feat.numel(); ++i)
        std::cout << feat.data[i] << (i + 1 == feat.numel() ? '\n' : ' ');
    return 0;
}

int cmd_memtable(const RunConfig& cfg, double area_km2, const std::vector<int>& t_exponents) {
    log_config(cfg);
    if (!(area_km2 > 0.0)) throw ConfigError("memtable: area must be > 0");
    const double side = std::sqrt(area_km2 * 1e6);
    const Rect coverage{0.0, 0.0, side, side};

    std::cout << "table_size,size_kb,kb_per_km2\n";
    for (int exp : t_exponents) {
        HashGridConfig grid = cfg.grid;
        grid.table_capacity = 1ull << exp;
        const HashGridParams params = HashGridParams::create(grid, coverage);
        const MemoryReport rep = memory_report(params, true);
        std::ostringstream row;
        row.precision(10);
        row << "2^" << exp << ',' << rep.total_kb() << ',' << rep.kb_per_km2;
        std::cout << row.str() << "\n";
    }
    return 0;
}

int cmd_bench(const std::string& prior_path, std::size_t grid_n, std::size_t runs) {
    const BinaryPriorStore store = load_file(prior_path);
    const BenchResult res = bench_prior(store, grid_n, runs);
    std::cout << "operation,mean_ms,std_ms,runs,pct_of_total\n";
    const double total = res.full_forward.mean_ms;
    auto row = [&](const char* name, const TimingStat& s) {
        std::cout << name << ',' << s.mean_ms << ',' << s.std_ms << ',' << s.runs << ','
                  << (total > 0.0 ? 100.0 * s.mean_ms / total : 0.0) << "\n";
    };
    row("prior_sampling", res.sampling);
    row("prior_fusion", res.fusion);
    row("full_forward", res.full_forward);
    return 0;
}

std::vector<Scene> read_samples_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("traversals: cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw FormatError("traversals: empty CSV");

    std::vector<std::string> cols;
    {
        std::istringstream hs(header);
        std::string c;
        while (std::getline(hs, c, ',')) cols.push_back(c);
    }
    int id_col = -1, t_col = -1, x_col = -1, y_col = -1;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "scene_id") id_col = static_cast<int>(i);
        if (cols[i] == "timestamp") t_col = static_cast<int>(i);
        if (cols[i] == "x") x_col = static_cast<int>(i);
        if (cols[i] == "y") y_col = static_cast<int>(i);
    }
    if (id_col < 0 || t_col < 0 || x_col < 0 || y_col < 0)
        throw FormatError("traversals: CSV needs scene_id,timestamp,x,y columns");

    std::map<std::string, Scene> by_id;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() != cols.size())
            throw FormatError("traversals: bad field count on line " + std::to_string(lineno));
        TrajectorySample s;
        s.scene_id = fields[static_cast<std::size_t>(id_col)];
        try {
            s.timestamp = std::stod(fields[static_cast<std::size_t>(t_col)]);
            s.position.x = std::stod(fields[static_cast<std::size_t>(x_col)]);
            s.position.y = std::stod(fields[static_cast<std::size_t>(y_col)]);
        } catch (const std::exception&) {
            throw FormatError("traversals: bad numeric field on line " + std::to_string(lineno));
        }
        auto& scene = by_id[s.scene_id];
        scene.id = s.scene_id;
        scene.samples.push_back(s);
    }

    std::vector<Scene> scenes;
    for (auto& [id, scene] : by_id) {
        std::stable_sort(scene.samples.begin(), scene.samples.end(),
                         [](const TrajectorySample& a, const TrajectorySample& b) {
                             return a.timestamp < b.timestamp;
                         });
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

int cmd_traversals(const std::string& log_path, const std::string& out_path, double radius) {
    const std::vector<Scene> scenes = read_samples_csv(log_path);
    const std::vector<Scene> merged = merge_trajectories(scenes);
    std::cerr << "traversals: " << scenes.size() << " scenes merged into " << merged.size()
              << "\n";

    // Per sample: how many OTHER merged scenes pass within the radius.
    std::map<std::size_t, std::size_t> histogram;
    for (std::size_t i = 0; i < merged.size(); ++i) {
        std::vector<Scene> others;
        for (std::size_t j = 0; j < merged.size(); ++j)
            if (j != i) others.push_back(merged[j]);
        for (const auto& s : merged[i].samples)
            histogram[traversal_count(s, others, radius)] += 1;
    }

    std::ostringstream csv;
    csv << "traversals,samples\n";
    for (const auto& [k, v] : histogram) csv << k << ',' << v << "\n";
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(out_path);
        if (!out) throw FormatError("traversals: cannot open " + out_path);
        out << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compressed map prior: training, querying and analysis toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, map_path, prior_path, metrics_path, log_path;
    std::vector<std::string> overrides;
    std::uint64_t seed_flag = 0;
    bool seed_given = false;
    double qx = 0.0, qy = 0.0;
    double area_km2 = 6.4;
    std::vector<int> t_exponents{15, 16, 17, 18};
    std::size_t grid_n = 128, runs = 100;
    double radius = 50.0;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", overrides, "config override key=value (repeatable)");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic semantic map");
    add_config(synth);
    synth->add_option("--seed", seed_flag, "map seed")->each([&](const std::string&) { seed_given = true; });
    synth->add_option("--out", out_path, "output .cmpr path")->required();

    CLI::App* train = app.add_subcommand("train", "train a prior on a map, write frozen store");
    add_config(train);
    train->add_option("--map", map_path, "input .cmpr map")->required();
    train->add_option("--out", out_path, "output .cmpp store")->required();
    train->add_option("--metrics", metrics_path, "metrics CSV path (default stdout)");
    train->add_option("--seed", seed_flag, "training seed")->each([&](const std::string&) { seed_given = true; });

    CLI::App* eval = app.add_subcommand("eval", "mIoU of a frozen store against a map");
    eval->add_option("--prior", prior_path, "input .cmpp store")->required();
    eval->add_option("--map", map_path, "input .cmpr map")->required();

    CLI::App* query = app.add_subcommand("query", "print the prior feature at a world point");
    query->add_option("--prior", prior_path, "input .cmpp store")->required();
    query->add_option("--x", qx, "world x, meters")->required();
    query->add_option("--y", qy, "world y, meters")->required();

    CLI::App* memtable = app.add_subcommand("memtable", "print the storage-size table");
    add_config(memtable);
    memtable->add_option("--area", area_km2, "coverage area, km^2");
    memtable->add_option("--texp", t_exponents, "table size exponents to sweep");

    CLI::App* bench = app.add_subcommand("bench", "prior sampling latency stats");
    bench->add_option("--prior", prior_path, "input .cmpp store")->required();
    bench->add_option("--grid", grid_n, "query grid side length");
    bench->add_option("--runs", runs, "timed sampling runs");

    CLI::App* traversals = app.add_subcommand("traversals", "merge scenes, traversal histogram");
    traversals->add_option("--log", log_path, "samples CSV (scene_id,timestamp,x,y)")->required();
    traversals->add_option("--out", out_path, "histogram CSV path (default stdout)");
    traversals->add_option("--radius", radius, "proximity radius, meters");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve_config(config_path, overrides);
        if (seed_given) cfg.seed = seed_flag;
        if (synth->parsed()) return cmd_synth(cfg, out_path);
        if (train->parsed()) return cmd_train(cfg, map_path, out_path, metrics_path);
        if (eval->parsed()) return cmd_eval(prior_path, map_path);
        if (query->parsed()) return cmd_query(prior_path, qx, qy);
        if (memtable->parsed()) return cmd_memtable(cfg, area_km2, t_exponents);
        if (bench->parsed()) return cmd_bench(prior_path, grid_n, runs);
        if (traversals->parsed()) return cmd_traversals(log_path, out_path, radius);
    } catch (const cmp::ConfigError& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return 2;
    } catch (const cmp::FormatError& e) {
        std::cerr << "error (file): " << e.what() << "\n";
        return 3;
    } catch (const cmp::TrainingError& e) {
        std::cerr << "error (training): " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
