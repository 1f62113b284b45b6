#include "pxseg/model.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "pxseg/errors.hpp"
#include "pxseg/kernels.hpp"

namespace pxseg {

namespace {

using nlohmann::json;

// Seed-stream salts so that parameter init and per-step sampling draw from
// independent deterministic sequences of the one configured seed.
constexpr std::uint64_t kInitSalt = 0x696e6974ull;    // "init"
constexpr std::uint64_t kSamplerSalt = 0x73616d70ull; // "samp"

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known) throw DataError("unknown key '" + item.key() + "' in " + where);
    }
}

std::vector<int> int_list(const json& arr, const std::string& where) {
    if (!arr.is_array()) throw DataError(where + " must be an array");
    std::vector<int> out;
    for (const auto& v : arr) {
        if (!v.is_number_integer()) throw DataError(where + " entries must be integers");
        out.push_back(v.get<int>());
    }
    return out;
}

SampleStrategy parse_strategy(const std::string& s) {
    if (s == "uniform") return SampleStrategy::uniform;
    if (s == "class_balanced") return SampleStrategy::class_balanced;
    throw DataError("sampler must be 'uniform' or 'class_balanced', got '" + s + "'");
}

SkewFallback parse_fallback(const std::string& s) {
    if (s == "with_replacement") return SkewFallback::with_replacement;
    if (s == "redistribute") return SkewFallback::redistribute;
    throw DataError("skew_fallback must be 'with_replacement' or 'redistribute', got '" + s +
                    "'");
}

const char* strategy_name(SampleStrategy s) {
    return s == SampleStrategy::uniform ? "uniform" : "class_balanced";
}

const char* fallback_name(SkewFallback f) {
    return f == SkewFallback::with_replacement ? "with_replacement" : "redistribute";
}

// ---- checkpoint byte-level helpers (explicit little-endian) ----

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64_block(std::ostream& os, const double* values, std::size_t n) {
    std::vector<unsigned char> buf(n * 8);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t u;
        std::memcpy(&u, &values[i], 8);
        for (int k = 0; k < 8; ++k)
            buf[i * 8 + k] = static_cast<unsigned char>((u >> (8 * k)) & 0xFFu);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

// Returns bytes actually read (short count at EOF).
std::size_t read_bytes(std::istream& is, void* out, std::size_t n) {
    is.read(static_cast<char*>(out), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount());
}

std::uint32_t decode_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

struct Entry {
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
};

void write_entry(std::ostream& os, const std::string& name,
                 const std::vector<std::uint32_t>& dims, const double* data, std::size_t n) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (std::uint32_t d : dims) put_u32(os, d);
    put_f64_block(os, data, n);
}

Entry scalar_entry(double v) { return Entry{{1}, {v}}; }

Entry list_entry(const std::vector<int>& values) {
    Entry e;
    e.dims = {static_cast<std::uint32_t>(values.size())};
    e.data.assign(values.begin(), values.end());
    return e;
}

// Config travels inside the checkpoint as ordinary named entries so the file
// format stays exactly the one documented for parameters. The 64-bit seed is
// split into two u32-valued doubles (lo, hi); every other field is integral
// or a plain double.
std::vector<std::pair<std::string, Entry>> config_entries(const ModelConfig& c) {
    std::vector<std::pair<std::string, Entry>> out;
    out.emplace_back("config/in_channels", scalar_entry(c.in_channels));
    Entry stages;
    stages.dims = {static_cast<std::uint32_t>(2 * c.stages.size())};
    for (const StageConfig& s : c.stages) {
        stages.data.push_back(s.n_convs);
        stages.data.push_back(s.width);
    }
    out.emplace_back("config/stages", std::move(stages));
    out.emplace_back("config/tap_stages", list_entry(c.tap_stages));
    out.emplace_back("config/mlp_widths", list_entry(c.mlp_widths));
    out.emplace_back("config/n_classes", scalar_entry(c.n_classes));
    out.emplace_back("config/n_sample_pixels", scalar_entry(c.n_sample_pixels));
    out.emplace_back("config/sampler",
                     scalar_entry(c.sampler == SampleStrategy::uniform ? 0.0 : 1.0));
    out.emplace_back("config/skew_fallback",
                     scalar_entry(c.skew_fallback == SkewFallback::with_replacement ? 0.0 : 1.0));
    out.emplace_back("config/sgd",
                     Entry{{3}, {c.sgd.learning_rate, c.sgd.momentum, c.sgd.weight_decay}});
    out.emplace_back("config/sgd_seed",
                     Entry{{2},
                           {static_cast<double>(c.sgd.seed & 0xFFFFFFFFull),
                            static_cast<double>(c.sgd.seed >> 32)}});
    out.emplace_back("config/iterations", scalar_entry(c.iterations));
    return out;
}

int int_from(double v, const std::string& what) {
    if (!(v >= INT_MIN && v <= INT_MAX) || v != std::floor(v))
        throw DataError("checkpoint entry '" + what + "' holds a non-integer value");
    return static_cast<int>(v);
}

const Entry& need_entry(const std::map<std::string, Entry>& entries, const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw DataError("checkpoint missing entry '" + name + "'");
    return it->second;
}

ModelConfig config_from_entries(const std::map<std::string, Entry>& entries) {
    ModelConfig c;
    c.in_channels = int_from(need_entry(entries, "config/in_channels").data.at(0),
                             "config/in_channels");
    const Entry& stages = need_entry(entries, "config/stages");
    if (stages.data.size() % 2 != 0)
        throw DataError("checkpoint entry 'config/stages' must hold (n_convs,width) pairs");
    c.stages.clear();
    for (std::size_t i = 0; i < stages.data.size(); i += 2)
        c.stages.push_back({int_from(stages.data[i], "config/stages"),
                            int_from(stages.data[i + 1], "config/stages")});
    c.tap_stages.clear();
    for (double v : need_entry(entries, "config/tap_stages").data)
        c.tap_stages.push_back(int_from(v, "config/tap_stages"));
    c.mlp_widths.clear();
    for (double v : need_entry(entries, "config/mlp_widths").data)
        c.mlp_widths.push_back(int_from(v, "config/mlp_widths"));
    c.n_classes = int_from(need_entry(entries, "config/n_classes").data.at(0), "config/n_classes");
    c.n_sample_pixels = int_from(need_entry(entries, "config/n_sample_pixels").data.at(0),
                                 "config/n_sample_pixels");
    const int sampler = int_from(need_entry(entries, "config/sampler").data.at(0),
                                 "config/sampler");
    if (sampler != 0 && sampler != 1) throw DataError("checkpoint sampler code must be 0 or 1");
    c.sampler = sampler == 0 ? SampleStrategy::uniform : SampleStrategy::class_balanced;
    const int fallback = int_from(need_entry(entries, "config/skew_fallback").data.at(0),
                                  "config/skew_fallback");
    if (fallback != 0 && fallback != 1)
        throw DataError("checkpoint skew_fallback code must be 0 or 1");
    c.skew_fallback = fallback == 0 ? SkewFallback::with_replacement : SkewFallback::redistribute;
    const Entry& sgd = need_entry(entries, "config/sgd");
    if (sgd.data.size() != 3)
        throw DataError("checkpoint entry 'config/sgd' must hold (lr,momentum,weight_decay)");
    c.sgd.learning_rate = sgd.data[0];
    c.sgd.momentum = sgd.data[1];
    c.sgd.weight_decay = sgd.data[2];
    const Entry& seed = need_entry(entries, "config/sgd_seed");
    if (seed.data.size() != 2)
        throw DataError("checkpoint entry 'config/sgd_seed' must hold two u32 halves");
    const double lo = seed.data[0], hi = seed.data[1];
    if (lo != std::floor(lo) || hi != std::floor(hi) || lo < 0 || hi < 0 || lo > 4294967295.0 ||
        hi > 4294967295.0)
        throw DataError("checkpoint entry 'config/sgd_seed' halves must be u32 values");
    c.sgd.seed = static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
    c.iterations = int_from(need_entry(entries, "config/iterations").data.at(0),
                            "config/iterations");
    return c;
}

} // namespace

// ---- ModelConfig ----

void ModelConfig::validate() const {
    if (in_channels < 1) throw DataError("in_channels must be positive");
    if (stages.empty()) throw DataError("stages must be nonempty");
    for (std::size_t s = 0; s < stages.size(); ++s) {
        if (stages[s].n_convs < 1)
            throw DataError("stage " + std::to_string(s) + " n_convs must be positive");
        if (stages[s].width < 1)
            throw DataError("stage " + std::to_string(s) + " width must be positive");
    }
    if (tap_stages.empty()) throw DataError("tap_stages must be nonempty");
    for (std::size_t i = 0; i < tap_stages.size(); ++i) {
        const int t = tap_stages[i];
        if (t < 0 || t >= static_cast<int>(stages.size()))
            throw DataError("tap_stages entry " + std::to_string(t) +
                            " is not a valid stage index");
        if (i > 0 && tap_stages[i] <= tap_stages[i - 1])
            throw DataError("tap_stages must be strictly increasing");
    }
    for (int w : mlp_widths)
        if (w < 1) throw DataError("mlp_widths entries must be positive");
    if (n_classes < 1) throw DataError("n_classes must be positive");
    if (n_sample_pixels < 1) throw DataError("n_sample_pixels must be positive");
    if (!(sgd.learning_rate > 0.0)) throw DataError("learning_rate must be positive");
    if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0))
        throw DataError("momentum must lie in [0,1)");
    if (!(sgd.weight_decay >= 0.0)) throw DataError("weight_decay must be nonnegative");
    if (iterations < 1) throw DataError("iterations must be positive");
}

int ModelConfig::hypercolumn_width() const {
    int f = 0;
    for (int t : tap_stages) f += stages[static_cast<std::size_t>(t)].width;
    return f;
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("config JSON parse error: ") + e.what());
    }
    if (!j.is_object()) throw DataError("config JSON root must be an object");
    reject_unknown_keys(j,
                        {"in_channels", "stages", "tap_stages", "mlp_widths", "n_classes",
                         "n_sample_pixels", "sampler", "skew_fallback", "sgd", "iterations"},
                        "config");
    ModelConfig cfg;
    try {
        if (j.contains("in_channels")) cfg.in_channels = j["in_channels"].get<int>();
        if (j.contains("stages")) {
            if (!j["stages"].is_array()) throw DataError("stages must be an array");
            cfg.stages.clear();
            for (const auto& s : j["stages"]) {
                if (!s.is_object())
                    throw DataError("stages entries must be objects with n_convs and width");
                reject_unknown_keys(s, {"n_convs", "width"}, "stages entry");
                cfg.stages.push_back({s.at("n_convs").get<int>(), s.at("width").get<int>()});
            }
        }
        if (j.contains("tap_stages")) cfg.tap_stages = int_list(j["tap_stages"], "tap_stages");
        if (j.contains("mlp_widths")) cfg.mlp_widths = int_list(j["mlp_widths"], "mlp_widths");
        if (j.contains("n_classes")) cfg.n_classes = j["n_classes"].get<int>();
        if (j.contains("n_sample_pixels"))
            cfg.n_sample_pixels = j["n_sample_pixels"].get<int>();
        if (j.contains("sampler")) cfg.sampler = parse_strategy(j["sampler"].get<std::string>());
        if (j.contains("skew_fallback"))
            cfg.skew_fallback = parse_fallback(j["skew_fallback"].get<std::string>());
        if (j.contains("sgd")) {
            const json& s = j["sgd"];
            if (!s.is_object()) throw DataError("sgd must be an object");
            reject_unknown_keys(s, {"learning_rate", "momentum", "weight_decay", "seed"}, "sgd");
            if (s.contains("learning_rate"))
                cfg.sgd.learning_rate = s["learning_rate"].get<double>();
            if (s.contains("momentum")) cfg.sgd.momentum = s["momentum"].get<double>();
            if (s.contains("weight_decay"))
                cfg.sgd.weight_decay = s["weight_decay"].get<double>();
            if (s.contains("seed")) cfg.sgd.seed = s["seed"].get<std::uint64_t>();
        }
        if (j.contains("iterations")) cfg.iterations = j["iterations"].get<int>();
    } catch (const json::exception& e) {
        throw DataError(std::string("config JSON field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_json_text(buf.str());
}

std::string ModelConfig::to_json_text() const {
    json j;
    j["in_channels"] = in_channels;
    j["stages"] = json::array();
    for (const StageConfig& s : stages)
        j["stages"].push_back({{"n_convs", s.n_convs}, {"width", s.width}});
    j["tap_stages"] = tap_stages;
    j["mlp_widths"] = mlp_widths;
    j["n_classes"] = n_classes;
    j["n_sample_pixels"] = n_sample_pixels;
    j["sampler"] = strategy_name(sampler);
    j["skew_fallback"] = fallback_name(skew_fallback);
    j["sgd"] = {{"learning_rate", sgd.learning_rate},
                {"momentum", sgd.momentum},
                {"weight_decay", sgd.weight_decay},
                {"seed", sgd.seed}};
    j["iterations"] = iterations;
    return j.dump(2) + "\n";
}

// ---- Model ----

Model::Model(ModelConfig config) : config_(std::move(config)), optimizer_(config_.sgd) {
    config_.validate();
    Rng rng(derive_seed(config_.sgd.seed, kInitSalt));
    int in_ch = config_.in_channels;
    for (std::size_t s = 0; s < config_.stages.size(); ++s) {
        const StageConfig& stage = config_.stages[s];
        std::vector<std::pair<Tensor, Tensor>> convs;
        for (int i = 0; i < stage.n_convs; ++i) {
            const LayerSpec spec = conv2d_spec(i == 0 ? in_ch : stage.width, stage.width);
            Tensor w = init_weights(spec, rng);
            Tensor b = init_bias(spec);
            const std::string base = "stage" + std::to_string(s) + ".conv" + std::to_string(i);
            w.set_name(base + ".weight");
            b.set_name(base + ".bias");
            named_params_.emplace_back(w.name(), w);
            named_params_.emplace_back(b.name(), b);
            convs.emplace_back(w, b);
        }
        stage_convs_.push_back(std::move(convs));
        in_ch = stage.width;
    }
    int fan_in = config_.hypercolumn_width();
    std::vector<int> widths = config_.mlp_widths;
    widths.push_back(config_.n_classes);
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const LayerSpec spec = linear_spec(fan_in, widths[i]);
        Tensor w = init_weights(spec, rng);
        Tensor b = init_bias(spec);
        const std::string base = "mlp.fc" + std::to_string(i);
        w.set_name(base + ".weight");
        b.set_name(base + ".bias");
        named_params_.emplace_back(w.name(), w);
        named_params_.emplace_back(b.name(), b);
        mlp_layers_.emplace_back(w, b);
        fan_in = widths[i];
    }
    params_.reserve(named_params_.size());
    for (auto& [name, t] : named_params_) params_.push_back(t);
}

FeaturePyramid Model::forward_backbone(const Tensor& image) {
    if (image.rank() != 3)
        throw ShapeError("backbone input must be [C,H,W], got rank " +
                         std::to_string(image.rank()));
    if (image.dim(0) != config_.in_channels)
        throw ShapeError("backbone input has " + std::to_string(image.dim(0)) +
                         " channels, config expects " + std::to_string(config_.in_channels));
    const int h = image.dim(1), w = image.dim(2);
    const int min_side = 1 << static_cast<int>(config_.stages.size());
    if (h < min_side || w < min_side)
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is smaller than the pool chain of " +
                         std::to_string(config_.stages.size()) + " stages (needs >= " +
                         std::to_string(min_side) + " per side)");

    std::vector<char> tapped(config_.stages.size(), 0);
    for (int t : config_.tap_stages) tapped[static_cast<std::size_t>(t)] = 1;

    FeaturePyramid pyramid;
    pyramid.input_height = h;
    pyramid.input_width = w;
    Tensor x = image;
    int stride = 1;
    for (std::size_t s = 0; s < config_.stages.size(); ++s) {
        for (const auto& [wgt, bias] : stage_convs_[s])
            x = relu_forward(conv2d_forward(x, wgt, bias));
        if (tapped[s]) pyramid.levels.push_back({x, stride});
        x = maxpool2x2_forward(x);
        stride *= 2;
    }
    return pyramid;
}

Tensor Model::mlp_forward(const Tensor& features) {
    Tensor x = features;
    for (std::size_t i = 0; i < mlp_layers_.size(); ++i) {
        x = linear_forward(x, mlp_layers_[i].first, mlp_layers_[i].second);
        if (i + 1 < mlp_layers_.size()) x = relu_forward(x);
    }
    return x;
}

Tensor Model::forward_sparse(const Tensor& image,
                             const std::vector<std::pair<int, int>>& pixels) {
    const FeaturePyramid pyramid = forward_backbone(image);
    return mlp_forward(extract_hypercolumns(pyramid, pixels));
}

double Model::train_step(const LabeledSlice& slice) {
    const int h = slice.height(), w = slice.width();
    if (static_cast<std::int64_t>(slice.mask.size()) != static_cast<std::int64_t>(h) * w)
        throw ShapeError("slice mask has " + std::to_string(slice.mask.size()) +
                         " entries, image is " + std::to_string(h) + "x" + std::to_string(w));
    if (!slice.valid.empty() && slice.valid.size() != slice.mask.size())
        throw ShapeError("slice validity mask size does not match the label mask");
    for (int v : slice.mask)
        if (v < 0 || v >= config_.n_classes)
            throw DataError("slice label " + std::to_string(v) + " outside [0," +
                            std::to_string(config_.n_classes) + ")");

    SamplePlan plan;
    plan.n_total = config_.n_sample_pixels;
    plan.strategy = config_.sampler;
    plan.skew_fallback = config_.skew_fallback;
    plan.seed = derive_seed(derive_seed(config_.sgd.seed, kSamplerSalt),
                            static_cast<std::uint64_t>(step_));
    const LabelView view{h, w, slice.mask, slice.valid};
    const PixelBatch batch = sample_pixels(view, plan);

    const Tensor logits = forward_sparse(slice.image, batch.coords);
    const Tensor loss = softmax_cross_entropy(logits, batch.labels);
    backward(loss);
    optimizer_.step(params_);
    for (Tensor& p : params_) p.zero_grad();
    ++step_;
    return loss.item();
}

DensePrediction Model::predict_dense(const Tensor& image, const PredictOptions& options) {
    if (options.tile_rows < 1) throw ShapeError("tile_rows must be >= 1");
    const FeaturePyramid pyramid = forward_backbone(image);
    const int h = image.dim(1), w = image.dim(2);
    const int k = config_.n_classes;

    DensePrediction out;
    out.n_classes = k;
    out.height = h;
    out.width = w;
    out.labels.assign(static_cast<std::size_t>(h) * w, 0);
    out.probs.assign(static_cast<std::size_t>(k) * h * w, 0.0);

    std::vector<std::pair<int, int>> pixels;
    std::vector<double> probs;
    for (int r0 = 0; r0 < h; r0 += options.tile_rows) {
        const int r1 = std::min(h, r0 + options.tile_rows);
        pixels.clear();
        for (int r = r0; r < r1; ++r)
            for (int c = 0; c < w; ++c) pixels.emplace_back(r, c);
        const Tensor logits = mlp_forward(extract_hypercolumns(pyramid, pixels));
        const int n = static_cast<int>(pixels.size());
        probs.assign(static_cast<std::size_t>(n) * k, 0.0);
        kernels::softmax_rows(logits.data().data(), n, k, probs.data());
        for (int p = 0; p < n; ++p) {
            const auto [r, c] = pixels[static_cast<std::size_t>(p)];
            const double* row = probs.data() + static_cast<std::size_t>(p) * k;
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (row[j] > row[best]) best = j;
            out.labels[static_cast<std::size_t>(r) * w + c] = best;
            for (int j = 0; j < k; ++j)
                out.probs[(static_cast<std::size_t>(j) * h + r) * w + c] = row[j];
        }
    }
    return out;
}

void Model::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("PXSEG1\0", 7);
    for (const auto& [name, entry] : config_entries(config_))
        write_entry(os, name, entry.dims, entry.data.data(), entry.data.size());
    for (const auto& [name, tensor] : named_params_) {
        std::vector<std::uint32_t> dims;
        for (int d : tensor.shape()) dims.push_back(static_cast<std::uint32_t>(d));
        const auto data = tensor.data();
        write_entry(os, name, dims, data.data(), data.size());
    }
    os.flush();
    if (!os) throw DataError("checkpoint write failed: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);

    char magic[7];
    if (read_bytes(is, magic, 7) != 7)
        throw DataError("checkpoint truncated before magic: " + path);
    if (std::memcmp(magic, "PXSEG", 5) != 0 || magic[6] != '\0')
        throw DataError("bad checkpoint magic in " + path);
    if (magic[5] != '1')
        throw DataError(std::string("unsupported checkpoint version '") + magic[5] + "' in " +
                        path);

    std::map<std::string, Entry> entries;
    while (true) {
        unsigned char lenbuf[4];
        const std::size_t got = read_bytes(is, lenbuf, 4);
        if (got == 0) break; // clean end exactly at an entry boundary
        if (got < 4) throw DataError("checkpoint truncated in entry header: " + path);
        const std::uint32_t name_len = decode_u32(lenbuf);
        if (name_len == 0 || name_len > 4096)
            throw DataError("checkpoint entry name length corrupt in " + path);
        std::string name(name_len, '\0');
        if (read_bytes(is, name.data(), name_len) != name_len)
            throw DataError("checkpoint truncated in entry name: " + path);

        unsigned char rankbuf[4];
        if (read_bytes(is, rankbuf, 4) != 4)
            throw DataError("checkpoint truncated in rank of '" + name + "': " + path);
        const std::uint32_t rank = decode_u32(rankbuf);
        if (rank > 8) throw DataError("checkpoint entry '" + name + "' rank corrupt");

        Entry entry;
        std::uint64_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            unsigned char dimbuf[4];
            if (read_bytes(is, dimbuf, 4) != 4)
                throw DataError("checkpoint truncated in dims of '" + name + "': " + path);
            const std::uint32_t d = decode_u32(dimbuf);
            entry.dims.push_back(d);
            numel *= d;
            if (numel > (1ull << 30))
                throw DataError("checkpoint entry '" + name + "' is implausibly large");
        }
        std::vector<unsigned char> payload(static_cast<std::size_t>(numel) * 8);
        if (read_bytes(is, payload.data(), payload.size()) != payload.size())
            throw DataError("checkpoint truncated in payload of '" + name + "': " + path);
        entry.data.resize(static_cast<std::size_t>(numel));
        for (std::size_t i = 0; i < entry.data.size(); ++i) {
            std::uint64_t u = 0;
            for (int kb = 0; kb < 8; ++kb)
                u |= static_cast<std::uint64_t>(payload[i * 8 + kb]) << (8 * kb);
            std::memcpy(&entry.data[i], &u, 8);
        }
        if (!entries.emplace(name, std::move(entry)).second)
            throw DataError("duplicate checkpoint entry '" + name + "' in " + path);
    }

    const ModelConfig cfg = config_from_entries(entries);
    Model model(cfg);

    std::size_t consumed = config_entries(cfg).size();
    for (auto& [name, tensor] : model.named_params_) {
        const auto it = entries.find(name);
        if (it == entries.end())
            throw DataError("checkpoint missing parameter '" + name + "' in " + path);
        const Entry& entry = it->second;
        std::vector<std::uint32_t> want;
        for (int d : tensor.shape()) want.push_back(static_cast<std::uint32_t>(d));
        if (entry.dims != want)
            throw DataError("checkpoint parameter '" + name + "' has unexpected shape");
        auto dst = tensor.data_mut();
        std::copy(entry.data.begin(), entry.data.end(), dst.begin());
        ++consumed;
    }
    if (consumed != entries.size()) {
        for (const auto& [name, entry] : entries) {
            if (name.rfind("config/", 0) == 0) continue;
            bool known = false;
            for (const auto& [pname, t] : model.named_params_)
                if (pname == name) {
                    known = true;
                    break;
                }
            if (!known)
                throw DataError("unexpected checkpoint entry '" + name + "' in " + path);
        }
        throw DataError("unexpected config entry in checkpoint: " + path);
    }
    return model;
}

} // namespace pxseg
