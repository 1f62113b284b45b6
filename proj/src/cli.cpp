#include "pxseg/cli.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "pxseg/datakit.hpp"
#include "pxseg/errors.hpp"
#include "pxseg/metrics.hpp"
#include "pxseg/model.hpp"
#include "pxseg/rng.hpp"

namespace pxseg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double value, const char* fmt) {
    if (std::isnan(value)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, value);
    return buf;
}

std::vector<std::string> list_volume_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pxvol")
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DataError("no .pxvol volumes in " + dir);
    return paths;
}

std::vector<LabeledSlice> load_dataset_slices(const std::string& dir) {
    std::vector<LabeledSlice> slices;
    for (const std::string& path : list_volume_files(dir)) {
        const Volume vol = load_volume(path);
        for (int z = 0; z < vol.depth; ++z) slices.push_back(volume_slice(vol, z));
    }
    return slices;
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

std::vector<RegionSpec> parse_regions(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw DataError(std::string("region spec JSON parse error: ") + e.what());
    }
    if (!j.is_array() || j.empty())
        throw DataError("region spec must be a nonempty JSON array: " + path);
    std::vector<RegionSpec> specs;
    try {
        for (const auto& r : j) {
            if (!r.is_object()) throw DataError("region entries must be objects");
            for (const auto& item : r.items())
                if (item.key() != "name" && item.key() != "labels")
                    throw DataError("unknown key '" + item.key() + "' in region spec");
            RegionSpec spec;
            spec.name = r.at("name").get<std::string>();
            for (const auto& v : r.at("labels")) spec.labels.insert(v.get<int>());
            if (spec.name.empty()) throw DataError("region name must be nonempty");
            if (spec.labels.empty())
                throw DataError("region '" + spec.name + "' has no labels");
            specs.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("region spec JSON field error: ") + e.what());
    }
    return specs;
}

SamplePlan parse_plan(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw DataError(std::string("sample plan JSON parse error: ") + e.what());
    }
    if (!j.is_object()) throw DataError("sample plan must be a JSON object: " + path);
    for (const auto& item : j.items())
        if (item.key() != "n_total" && item.key() != "strategy" && item.key() != "seed" &&
            item.key() != "ignore_label" && item.key() != "skew_fallback")
            throw DataError("unknown key '" + item.key() + "' in sample plan");
    SamplePlan plan;
    try {
        if (j.contains("n_total")) plan.n_total = j["n_total"].get<int>();
        if (j.contains("strategy")) {
            const std::string s = j["strategy"].get<std::string>();
            if (s == "uniform")
                plan.strategy = SampleStrategy::uniform;
            else if (s == "class_balanced")
                plan.strategy = SampleStrategy::class_balanced;
            else
                throw DataError("strategy must be 'uniform' or 'class_balanced', got '" + s +
                                "'");
        }
        if (j.contains("seed")) plan.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("ignore_label") && !j["ignore_label"].is_null())
            plan.ignore_label = j["ignore_label"].get<int>();
        if (j.contains("skew_fallback")) {
            const std::string s = j["skew_fallback"].get<std::string>();
            if (s == "with_replacement")
                plan.skew_fallback = SkewFallback::with_replacement;
            else if (s == "redistribute")
                plan.skew_fallback = SkewFallback::redistribute;
            else
                throw DataError(
                    "skew_fallback must be 'with_replacement' or 'redistribute', got '" + s +
                    "'");
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("sample plan JSON field error: ") + e.what());
    }
    if (plan.n_total < 1) throw DataError("sample plan n_total must be positive");
    return plan;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open output file: " + path);
    return os;
}

// Prediction honors the validity mask: invalid voxels are forced to
// background with probability 1 (they are never sampled during training).
void mask_invalid(DensePrediction& pred, std::span<const std::uint8_t> valid) {
    const std::size_t plane = static_cast<std::size_t>(pred.height) * pred.width;
    for (std::size_t i = 0; i < plane; ++i) {
        if (valid[i]) continue;
        pred.labels[i] = 0;
        for (int k = 0; k < pred.n_classes; ++k)
            pred.probs[static_cast<std::size_t>(k) * plane + i] = k == 0 ? 1.0 : 0.0;
    }
}

int run_synth(const std::string& config_path, const std::string& out_dir) {
    const SynthConfig cfg = SynthConfig::from_json_file(config_path);
    const auto paths = generate_synthetic(cfg, out_dir);
    std::cerr << "wrote " << paths.size() << " volume(s) to " << out_dir << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& loss_csv) {
    const ModelConfig cfg = ModelConfig::from_json_file(config_path);
    const std::vector<LabeledSlice> slices = load_dataset_slices(data_dir);
    Model model(cfg);
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.iterations));
    for (int step = 0; step < cfg.iterations; ++step) {
        const double loss =
            model.train_step(slices[static_cast<std::size_t>(step) % slices.size()]);
        losses.push_back(loss);
        if ((step + 1) % 200 == 0 || step + 1 == cfg.iterations)
            std::cerr << "step " << (step + 1) << "/" << cfg.iterations << " loss "
                      << format_double(loss, "%.6g") << "\n";
    }
    model.save_checkpoint(out_path);
    if (!loss_csv.empty()) {
        std::ofstream os = open_output(loss_csv);
        os << "step,loss\n";
        for (std::size_t i = 0; i < losses.size(); ++i)
            os << i << ',' << format_double(losses[i], "%.17g") << '\n';
    }
    return 0;
}

int run_predict(const std::string& checkpoint, const std::string& volume_path,
                const std::string& out_path) {
    Model model = Model::load_checkpoint(checkpoint);
    const Volume vol = load_volume(volume_path);
    if (vol.channels != model.config().in_channels)
        throw DataError("volume has " + std::to_string(vol.channels) +
                        " channels, model expects " +
                        std::to_string(model.config().in_channels));
    const int k = model.config().n_classes;
    if (k > 255) throw DataError("n_classes exceeds the u8 label range of the volume format");

    Volume out = Volume::make(k, vol.depth, vol.height, vol.width);
    const std::size_t plane = static_cast<std::size_t>(vol.height) * vol.width;
    for (int z = 0; z < vol.depth; ++z) {
        const LabeledSlice slice = volume_slice(vol, z);
        DensePrediction pred = model.predict_dense(slice.image);
        mask_invalid(pred, slice.valid);
        const std::size_t base = static_cast<std::size_t>(z) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            out.labels[base + i] = static_cast<std::uint8_t>(pred.labels[i]);
            out.valid[base + i] = slice.valid[i];
        }
        for (int c = 0; c < k; ++c) {
            const std::size_t dst = (static_cast<std::size_t>(c) * vol.depth + z) * plane;
            const std::size_t src = static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                out.image[dst + i] = static_cast<float>(pred.probs[src + i]);
        }
    }
    save_volume(out_path, out);
    return 0;
}

// Pairs of (case id, pred path, gt path).
std::vector<std::array<std::string, 3>> pair_cases(const std::string& pred,
                                                   const std::string& gt) {
    std::vector<std::array<std::string, 3>> cases;
    if (fs::is_directory(pred) != fs::is_directory(gt))
        throw DataError("--pred and --gt must both be files or both directories");
    if (fs::is_directory(pred)) {
        std::map<std::string, std::string> gt_by_name;
        for (const std::string& path : list_volume_files(gt))
            gt_by_name[fs::path(path).filename().string()] = path;
        for (const std::string& path : list_volume_files(pred)) {
            const std::string name = fs::path(path).filename().string();
            const auto it = gt_by_name.find(name);
            if (it == gt_by_name.end())
                throw DataError("prediction " + name + " has no matching ground truth in " + gt);
            cases.push_back({fs::path(path).stem().string(), path, it->second});
        }
    } else {
        cases.push_back({fs::path(pred).stem().string(), pred, gt});
    }
    return cases;
}

std::vector<int> volume_labels_as_int(const Volume& vol) {
    return std::vector<int>(vol.labels.begin(), vol.labels.end());
}

int run_evaluate(const std::string& pred, const std::string& gt, const std::string& regions_path,
                 const std::string& out_path, bool all_voxels,
                 const std::vector<double>& spacing) {
    const std::vector<RegionSpec> specs = parse_regions(regions_path);
    EvaluateOptions options;
    options.basis = all_voxels ? DistanceBasis::all_voxels : DistanceBasis::surface;
    options.spacing = spacing;

    std::ostringstream csv;
    write_metrics_csv_header(csv);
    for (const auto& [case_id, pred_path, gt_path] : pair_cases(pred, gt)) {
        const Volume pv = load_volume(pred_path);
        const Volume gv = load_volume(gt_path);
        if (pv.depth != gv.depth || pv.height != gv.height || pv.width != gv.width)
            throw DataError("prediction and ground truth dims differ for case " + case_id);
        MetricsReport report =
            evaluate(volume_labels_as_int(pv), volume_labels_as_int(gv),
                     {pv.depth, pv.height, pv.width}, specs, options);
        report.case_id = case_id;
        write_metrics_csv_rows(csv, report);
    }
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream os = open_output(out_path);
        os << csv.str();
    }
    return 0;
}

int run_sample_stats(const std::string& data_dir, const std::string& plan_path,
                     const std::string& out_path) {
    const SamplePlan base_plan = parse_plan(plan_path);
    std::ostringstream csv;
    csv << "volume,slice,label,count\n";
    std::uint64_t ordinal = 0;
    for (const std::string& path : list_volume_files(data_dir)) {
        const Volume vol = load_volume(path);
        const std::string name = fs::path(path).stem().string();
        std::vector<int> labels(vol.slice_voxels());
        for (int z = 0; z < vol.depth; ++z, ++ordinal) {
            const std::size_t base =
                static_cast<std::size_t>(z) * static_cast<std::size_t>(vol.slice_voxels());
            for (std::int64_t i = 0; i < vol.slice_voxels(); ++i)
                labels[static_cast<std::size_t>(i)] =
                    static_cast<int>(vol.labels[base + static_cast<std::size_t>(i)]);
            SamplePlan plan = base_plan;
            plan.seed = derive_seed(base_plan.seed, ordinal);
            const LabelView view{
                vol.height, vol.width, labels,
                std::span<const std::uint8_t>(vol.valid.data() + base,
                                              static_cast<std::size_t>(vol.slice_voxels()))};
            const PixelBatch batch = sample_pixels(view, plan);
            for (const auto& [label, count] : batch.per_class_counts)
                csv << name << ',' << z << ',' << label << ',' << count << '\n';
        }
    }
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream os = open_output(out_path);
        os << csv.str();
    }
    return 0;
}

// Mean per-slice metrics of one trained model over the test set.
struct RegionAggregate {
    double dice_sum = 0.0;
    std::int64_t dice_n = 0;
    double hd95_sum = 0.0;
    std::int64_t hd95_n = 0;
};

void accumulate_test_metrics(Model& model, const std::vector<std::string>& test_paths,
                             const std::vector<RegionSpec>& specs,
                             std::vector<RegionAggregate>& agg) {
    for (const std::string& path : test_paths) {
        const Volume vol = load_volume(path);
        for (int z = 0; z < vol.depth; ++z) {
            const LabeledSlice slice = volume_slice(vol, z);
            DensePrediction pred = model.predict_dense(slice.image);
            mask_invalid(pred, slice.valid);
            const MetricsReport report = evaluate(pred.labels, slice.mask,
                                                  {vol.height, vol.width}, specs, {});
            for (std::size_t r = 0; r < specs.size(); ++r) {
                const RegionMetrics& m = report.regions[r];
                agg[r].dice_sum += m.dice;
                agg[r].dice_n += 1;
                if (!(m.flags & kHd95Undefined)) {
                    agg[r].hd95_sum += m.hd95;
                    agg[r].hd95_n += 1;
                }
            }
        }
    }
}

int run_compare_samplers(const std::string& config_path, const std::string& train_dir,
                         const std::string& test_dir, const std::string& regions_path,
                         int runs, const std::string& out_path) {
    if (runs < 1) throw DataError("--runs must be positive");
    const ModelConfig base_cfg = ModelConfig::from_json_file(config_path);
    const std::vector<RegionSpec> specs = parse_regions(regions_path);
    const std::vector<LabeledSlice> train_slices = load_dataset_slices(train_dir);
    const std::vector<std::string> test_paths = list_volume_files(test_dir);

    std::ostringstream csv;
    csv << "run,sampler,region,dice,hd95\n";
    for (int run = 0; run < runs; ++run) {
        const std::uint64_t run_seed =
            derive_seed(base_cfg.sgd.seed, static_cast<std::uint64_t>(run));
        for (const SampleStrategy strategy :
             {SampleStrategy::uniform, SampleStrategy::class_balanced}) {
            ModelConfig cfg = base_cfg;
            cfg.sgd.seed = run_seed; // same seed => identical init for both samplers
            cfg.sampler = strategy;
            Model model(cfg);
            for (int step = 0; step < cfg.iterations; ++step)
                model.train_step(
                    train_slices[static_cast<std::size_t>(step) % train_slices.size()]);
            std::vector<RegionAggregate> agg(specs.size());
            accumulate_test_metrics(model, test_paths, specs, agg);
            const char* sampler_name =
                strategy == SampleStrategy::uniform ? "uniform" : "class_balanced";
            for (std::size_t r = 0; r < specs.size(); ++r) {
                const double mean_dice =
                    agg[r].dice_n > 0 ? agg[r].dice_sum / static_cast<double>(agg[r].dice_n)
                                      : std::nan("");
                const double mean_hd95 =
                    agg[r].hd95_n > 0 ? agg[r].hd95_sum / static_cast<double>(agg[r].hd95_n)
                                      : std::nan("");
                csv << run << ',' << sampler_name << ',' << specs[r].name << ','
                    << format_double(mean_dice, "%.10g") << ','
                    << format_double(mean_hd95, "%.10g") << '\n';
            }
            std::cerr << "run " << run << " " << sampler_name << " done\n";
        }
    }
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream os = open_output(out_path);
        os << csv.str();
    }
    return 0;
}

} // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"pxseg: class-balanced hypercolumn pixel segmentation toolkit"};
    app.require_subcommand(1);

    std::string synth_config, synth_out;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", synth_config, "SynthConfig JSON file")->required();
    synth->add_option("--out", synth_out, "output dataset directory")->required();

    std::string train_config, train_data, train_out, train_loss_csv;
    CLI::App* train = app.add_subcommand("train", "train a model on a dataset directory");
    train->add_option("--config", train_config, "ModelConfig JSON file")->required();
    train->add_option("--data", train_data, "dataset directory of .pxvol files")->required();
    train->add_option("--out", train_out, "output checkpoint path")->required();
    train->add_option("--loss-csv", train_loss_csv, "optional per-step loss CSV");

    std::string pr_ckpt, pr_volume, pr_out;
    CLI::App* predict = app.add_subcommand("predict", "segment one volume with a checkpoint");
    predict->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    predict->add_option("--volume", pr_volume, "input .pxvol volume")->required();
    predict->add_option("--out", pr_out, "output .pxvol (probabilities + labels)")->required();

    std::string ev_pred, ev_gt, ev_regions, ev_out;
    bool ev_all_voxels = false;
    std::vector<double> ev_spacing;
    CLI::App* ev = app.add_subcommand("evaluate", "score predictions against ground truth");
    ev->add_option("--pred", ev_pred, "prediction volume or directory")->required();
    ev->add_option("--gt", ev_gt, "ground-truth volume or directory")->required();
    ev->add_option("--regions", ev_regions, "RegionSpec JSON file")->required();
    ev->add_option("--out", ev_out, "output CSV (default: stdout)");
    ev->add_flag("--all-voxels", ev_all_voxels,
                 "compute distances over all foreground voxels, not surfaces");
    ev->add_option("--spacing", ev_spacing, "per-axis voxel spacing (z y x)")
        ->expected(3);

    std::string ss_data, ss_plan, ss_out;
    CLI::App* ss = app.add_subcommand("sample-stats", "per-class sampled-pixel counts");
    ss->add_option("--data", ss_data, "dataset directory")->required();
    ss->add_option("--plan", ss_plan, "SamplePlan JSON file")->required();
    ss->add_option("--out", ss_out, "output CSV (default: stdout)");

    std::string cs_config, cs_train, cs_test, cs_regions, cs_out;
    int cs_runs = 10;
    CLI::App* cs = app.add_subcommand("compare-samplers",
                                      "paired uniform vs class-balanced training runs");
    cs->add_option("--config", cs_config, "ModelConfig JSON file")->required();
    cs->add_option("--train", cs_train, "training dataset directory")->required();
    cs->add_option("--test", cs_test, "held-out dataset directory")->required();
    cs->add_option("--regions", cs_regions, "RegionSpec JSON file")->required();
    cs->add_option("--runs", cs_runs, "number of paired runs (default 10)");
    cs->add_option("--out", cs_out, "output CSV (default: stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return run_synth(synth_config, synth_out);
        if (train->parsed()) return run_train(train_config, train_data, train_out,
                                              train_loss_csv);
        if (predict->parsed()) return run_predict(pr_ckpt, pr_volume, pr_out);
        if (ev->parsed())
            return run_evaluate(ev_pred, ev_gt, ev_regions, ev_out, ev_all_voxels, ev_spacing);
        if (ss->parsed()) return run_sample_stats(ss_data, ss_plan, ss_out);
        if (cs->parsed())
            return run_compare_samplers(cs_config, cs_train, cs_test, cs_regions, cs_runs,
                                        cs_out);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace pxseg
