#include "dosepred/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "dosepred/augment.hpp"
#include "dosepred/checkpoint.hpp"
#include "dosepred/dca.hpp"
#include "dosepred/gradcheck.hpp"
#include "dosepred/losses.hpp"
#include "dosepred/metrics.hpp"
#include "dosepred/patient_io.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/rng.hpp"
#include "dosepred/scaffold.hpp"

namespace dosepred::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

json load_config(const GlobalOptions& opt) {
  if (!opt.config) return json::object();
  std::ifstream in(*opt.config, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + opt.config->string());
  return json::parse(in);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(const json& cfg) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(cfg.dump());
  return out.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path().empty() ? "." : p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void write_manifest(const GlobalOptions& opt, const json& cfg,
                    const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  ordered_json m;
  m["command"] = command;
  m["config_hash"] = config_hash(cfg);
  m["seed"] = opt.seed;
  const auto now = std::chrono::system_clock::now();
  m["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch())
          .count();
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["tool_version"] = kToolVersion;
  write_text(opt.out / "manifest.json", m.dump(2) + "\n");
}

DvhRelaxation relaxation_from(const json& cfg) {
  DvhRelaxation r;
  if (cfg.contains("loss")) {
    const json& l = cfg["loss"];
    r.n_bins = l.value("n_bins", r.n_bins);
    r.bin_min = l.value("bin_min", r.bin_min);
    r.bin_max = l.value("bin_max", r.bin_max);
    r.steepness = l.value("steepness", r.steepness);
  }
  return r;
}

LossWeights weights_from(const json& cfg) {
  LossWeights w;
  if (cfg.contains("loss")) {
    w.alpha = cfg["loss"].value("alpha", w.alpha);
    w.beta = cfg["loss"].value("beta", w.beta);
  }
  return w;
}

ScaffoldConfig model_from(const json& cfg) {
  ScaffoldConfig m;
  if (cfg.contains("model")) {
    const json& j = cfg["model"];
    m.stage_channels = j.value("stage_channels", m.stage_channels);
    m.heads = j.value("heads", m.heads);
    m.use_dca = j.value("use_dca", m.use_dca);
    m.head_gain = j.value("head_gain", m.head_gain);
    m.weight_gain = j.value("weight_gain", m.weight_gain);
  }
  return m;
}

TrainConfig train_from(const json& cfg, const GlobalOptions& opt) {
  TrainConfig t;
  t.seed = opt.seed;
  if (cfg.contains("train")) {
    const json& j = cfg["train"];
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.beta1 = j.value("beta1", t.beta1);
    t.beta2 = j.value("beta2", t.beta2);
    t.min_learning_rate = j.value("min_learning_rate", t.min_learning_rate);
    t.restart_period = j.value("restart_period", t.restart_period);
    t.seed = j.value("seed", t.seed);
    t.steps = j.value("steps", t.steps);
    t.augment = j.value("augment", t.augment);
    t.dvh_mode = j.value("dvh_mode", t.dvh_mode);
  }
  t.loss_weights = weights_from(cfg);
  t.relaxation = relaxation_from(cfg);
  return t;
}

double threshold_from(const json& cfg) {
  if (cfg.contains("metrics"))
    return cfg["metrics"].value("acceptance_threshold_gy", 3.0);
  return 3.0;
}

std::vector<fs::path> patient_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "meta.json"))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty())
    throw std::runtime_error("no patient directories under " + dir.string());
  return out;
}

std::string loss_trace_csv(const std::vector<TraceEntry>& trace) {
  std::ostringstream out;
  out << "step,lr,loss\n";
  for (const TraceEntry& e : trace)
    out << e.step << "," << format_double(e.lr) << "," << format_double(e.loss)
        << "\n";
  return out.str();
}

}  // namespace

int run_phantom_generate(int count, int size, const GlobalOptions& opt) {
  json cfg = load_config(opt);
  if (count < 1 || size < 4)
    throw std::runtime_error("phantom generate: need count >= 1 and size >= 4");
  const std::array<int, 3> shape{size, size, size};
  std::vector<std::string> outputs;
  for (const Patient& p : generate_cohort(count, shape, opt.seed)) {
    write_patient(p, opt.out / p.id);
    outputs.push_back((opt.out / p.id).string());
  }
  write_manifest(opt, cfg, "phantom generate", {}, outputs);
  std::cout << "generated " << count << " phantoms (" << size << "^3) under "
            << opt.out.string() << "\n";
  return kExitOk;
}

int run_evaluate(const fs::path& pred_dir, const fs::path& gt_dir,
                 const GlobalOptions& opt) {
  json cfg = load_config(opt);
  std::vector<Patient> gt;
  std::vector<Grid3> pred;
  for (const fs::path& d : patient_dirs(gt_dir)) {
    Patient p = load_patient(d);
    const fs::path pd = pred_dir / d.filename();
    if (!fs::exists(pd / "dose.csv"))
      throw std::runtime_error("no prediction for patient id " + p.id);
    pred.push_back(load_sparse_values(pd / "dose.csv", p.shape));
    gt.push_back(std::move(p));
  }
  MetricReport rep = evaluate_cohort(gt, pred, threshold_from(cfg));
  write_text(opt.out / "report.json", rep.to_json());
  write_text(opt.out / "rva_by_structure.csv", rep.rva_csv());
  write_manifest(opt, cfg, "evaluate", {pred_dir.string(), gt_dir.string()},
                 {(opt.out / "report.json").string(),
                  (opt.out / "rva_by_structure.csv").string()});
  std::cout << std::setprecision(6) << "dose score " << rep.dose_score
            << " Gy, dvh score " << rep.dvh_score << " Gy, R_VA "
            << rep.r_va_mean * 100.0 << "%, R_PA " << rep.r_pa * 100.0 << "%\n";
  return kExitOk;
}

int run_gradcheck(const std::string& target, const GlobalOptions& opt) {
  std::cout << std::setprecision(6);
  auto report = [&](const GradCheckResult& res, double min_pass) {
    std::cout << "checked " << res.checked << " parameters, "
              << res.pass_fraction() * 100.0 << "% passed, max rel err "
              << res.max_rel_err << " (" << res.worst_param << ")\n";
    const bool ok = res.pass_fraction() >= min_pass;
    std::cout << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? kExitOk : kExitValidation;
  };

  if (target == "loss" || target == "negative-control") {
    RandomStream rng(derive_seed(opt.seed, 11));
    const Shape shape{6, 6, 6};
    Tensor pred(shape, true);
    Tensor gt(shape);
    Tensor mask(shape);
    for (double& v : pred.data()) v = rng.uniform(0.0, 70.0);
    for (double& v : gt.data()) v = rng.uniform(0.0, 70.0);
    for (double& v : mask.data()) v = rng.bernoulli(0.7) ? 1.0 : 0.0;
    mask.data()[0] = 1.0;
    std::vector<std::pair<std::string, Tensor>> params{{"pred", pred}};
    LossWeights w;
    DvhRelaxation relax;
    auto loss_fn = [&](Tape& tape) {
      return combined_loss(tape, pred, gt, mask, w, relax);
    };
    GradCheckResult res =
        gradcheck_params(params, loss_fn, 50, 1e-5, 1e-5, derive_seed(opt.seed, 12),
                         target == "negative-control");
    return report(res, 1.0);
  }
  if (target == "dca") {
    DcaConfig cfg;
    cfg.n_stages = 3;
    cfg.channels = {4, 8, 16};
    cfg.base_spatial = {16, 16, 16};
    cfg.heads = 2;
    cfg.validate();
    RandomStream rng(derive_seed(opt.seed, 21));
    DcaState state(cfg.channels, derive_seed(opt.seed, 22));
    state.randomize(rng);
    std::vector<Tensor> inputs, weights;
    std::int64_t total_elems = 0;
    for (int i = 0; i < cfg.n_stages; ++i) {
      const auto s = cfg.stage_spatial(i);
      Tensor e({cfg.channels[static_cast<std::size_t>(i)], s[0], s[1], s[2]});
      Tensor w(e.shape());
      for (double& v : e.data()) v = rng.uniform(-0.5, 0.5);
      for (double& v : w.data()) v = rng.uniform(-0.5, 0.5);
      total_elems += e.size();
      inputs.push_back(e);
      weights.push_back(w);
    }
    // Mean, not sum: keeps finite-difference cancellation noise below the
    // relative-error floor for parameters whose true gradient is zero.
    const double inv_n = 1.0 / static_cast<double>(total_elems);
    auto loss_fn = [&](Tape& tape) {
      std::vector<Tensor> out = dca_forward(tape, cfg, state, inputs);
      Tensor total;
      for (std::size_t i = 0; i < out.size(); ++i) {
        Tensor term = sum(tape, mul(tape, out[i], weights[i]));
        total = total.defined() ? add(tape, total, term) : term;
      }
      return scale(tape, total, inv_n);
    };
    GradCheckResult res = gradcheck_params(state.params(), loss_fn, 200, 1e-4,
                                           1e-4, derive_seed(opt.seed, 23));
    return report(res, 0.99);
  }
  if (target == "net") {
    ScaffoldConfig mcfg;
    ScaffoldNet net(mcfg, derive_seed(opt.seed, 31));
    RandomStream rng(derive_seed(opt.seed, 32));
    Tensor input({mcfg.in_channels, 8, 8, 8});
    Tensor w({8, 8, 8});
    for (double& v : input.data()) v = rng.uniform(-1.0, 1.0);
    for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
    auto loss_fn = [&](Tape& tape) {
      return sum(tape, mul(tape, net.forward(tape, input), w));
    };
    GradCheckResult res = gradcheck_params(net.parameters(), loss_fn, 100, 1e-5,
                                           1e-3, derive_seed(opt.seed, 33));
    return report(res, 0.99);
  }
  throw std::runtime_error("unknown gradcheck target: " + target);
}

int run_train_demo(const fs::path& data_dir, const GlobalOptions& opt) {
  json cfg = load_config(opt);
  fs::path train_dir = data_dir / "train";
  fs::path val_dir = data_dir / "val";
  if (cfg.contains("data")) {
    if (cfg["data"].contains("train_dir")) train_dir = cfg["data"]["train_dir"].get<std::string>();
    if (cfg["data"].contains("val_dir")) val_dir = cfg["data"]["val_dir"].get<std::string>();
  }

  std::vector<PreparedPatient> cohort;
  for (const fs::path& d : patient_dirs(train_dir))
    cohort.push_back(preprocess(load_patient(d)));

  const ScaffoldConfig mcfg = model_from(cfg);
  const TrainConfig tcfg = train_from(cfg, opt);
  ScaffoldNet net(mcfg, tcfg.seed);
  const std::vector<TraceEntry> trace = train(net, cohort, tcfg);

  fs::create_directories(opt.out);
  save_checkpoint(net.parameters(), opt.out / "checkpoint");
  write_text(opt.out / "loss_trace.csv", loss_trace_csv(trace));

  std::vector<Patient> val_gt;
  std::vector<Grid3> val_pred;
  for (const fs::path& d : patient_dirs(val_dir)) {
    Patient p = load_patient(d);
    Grid3 pred = predict(net, preprocess(p));
    Patient pred_patient = p;
    pred_patient.dose_gt = pred;
    write_patient(pred_patient, opt.out / "predictions" / p.id);
    val_pred.push_back(std::move(pred));
    val_gt.push_back(std::move(p));
  }
  MetricReport rep = evaluate_cohort(val_gt, val_pred, threshold_from(cfg));
  write_text(opt.out / "report.json", rep.to_json());
  write_text(opt.out / "rva_by_structure.csv", rep.rva_csv());
  write_manifest(opt, cfg, "train-demo", {train_dir.string(), val_dir.string()},
                 {(opt.out / "checkpoint.json").string(),
                  (opt.out / "loss_trace.csv").string(),
                  (opt.out / "report.json").string()});
  std::cout << std::setprecision(6) << "trained " << tcfg.steps
            << " steps; first loss "
            << (trace.empty() ? 0.0 : trace.front().loss) << ", last loss "
            << (trace.empty() ? 0.0 : trace.back().loss) << "; val dose score "
            << rep.dose_score << " Gy\n";
  return kExitOk;
}

int run_dvh_plot(const fs::path& patient_dir, const fs::path& pred_file,
                 const GlobalOptions& opt) {
  json cfg = load_config(opt);
  Patient p = load_patient(patient_dir);
  Grid3 pred = load_sparse_values(pred_file, p.shape);

  std::vector<double> samples;
  for (double d = 0.0; d <= 80.0 + 1e-9; d += 0.25) samples.push_back(d);

  std::vector<std::string> names;
  std::vector<std::vector<double>> gt_curves, pred_curves;
  for (const auto& [name, mask] : p.structures) {
    names.push_back(name);
    gt_curves.push_back(exact_dvh(p.dose_gt, mask, samples));
    pred_curves.push_back(exact_dvh(pred, mask, samples));
  }
  if (names.empty())
    throw std::runtime_error("dvh-plot: patient has no structures");

  std::ostringstream csv;
  csv << "dose_gy";
  for (const std::string& n : names) csv << "," << n << "_gt," << n << "_pred";
  csv << "\n";
  for (std::size_t s = 0; s < samples.size(); ++s) {
    csv << format_double(samples[s]);
    for (std::size_t i = 0; i < names.size(); ++i)
      csv << "," << format_double(gt_curves[i][s]) << ","
          << format_double(pred_curves[i][s]);
    csv << "\n";
  }
  write_text(opt.out / "dvh.csv", csv.str());

  // SVG rendered straight from the CSV data
  const double width = 640, height = 480, ml = 60, mb = 50, mt = 20, mr = 20;
  const double px = width - ml - mr, py = height - mt - mb;
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                   "#bcbd22", "#17becf"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + py << "\" x2=\"" << ml + px
      << "\" y2=\"" << mt + py << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << mt + py << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << ml + px / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\">dose (Gy)</text>\n";
  svg << "<text x=\"15\" y=\"" << mt + py / 2
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " << mt + py / 2
      << ")\">fractional volume</text>\n";
  auto emit_curve = [&](const std::vector<double>& curve, const char* color,
                        bool dashed) {
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\""
        << (dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
    for (std::size_t s = 0; s < samples.size(); ++s)
      svg << ml + px * samples[s] / 80.0 << "," << mt + py * (1.0 - curve[s])
          << " ";
    svg << "\"/>\n";
  };
  for (std::size_t i = 0; i < names.size(); ++i) {
    const char* color = kPalette[i % 10];
    emit_curve(gt_curves[i], color, false);
    emit_curve(pred_curves[i], color, true);
    svg << "<text x=\"" << ml + px - 120 << "\" y=\"" << mt + 16 * (i + 1)
        << "\" fill=\"" << color << "\">" << names[i] << "</text>\n";
  }
  svg << "</svg>\n";
  write_text(opt.out / "dvh.svg", svg.str());
  write_manifest(opt, cfg, "dvh-plot",
                 {patient_dir.string(), pred_file.string()},
                 {(opt.out / "dvh.csv").string(), (opt.out / "dvh.svg").string()});
  std::cout << "wrote DVH curves for " << names.size() << " structures\n";
  return kExitOk;
}

}  // namespace dosepred::cli
