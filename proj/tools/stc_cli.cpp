// stc: command-line driver for training, coding, search and evaluation.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "stc/stc.hpp"

namespace {

using json = nlohmann::json;
using namespace stc;

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

VectorSet load_vectors(const std::string& path) {
  if (ends_with(path, ".bvecs")) return load_xvecs(path, XvecsKind::bvecs);
  if (ends_with(path, ".fvecs")) return load_xvecs(path, XvecsKind::fvecs);
  throw ConfigError("unsupported vector file '" + path + "' (expected .fvecs or .bvecs)");
}

void save_vectors(const std::string& path, const Matrix& data) {
  VectorSet s;
  s.data = data;
  save_xvecs(path, s, ends_with(path, ".bvecs") ? XvecsKind::bvecs : XvecsKind::fvecs);
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

/// Resolved option values of a subcommand as a flat JSON object.
json resolved_config(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (o->get_expected_min() == 0) {
      j[name] = o->count() > 0;
      continue;
    }
    const auto res = o->results();
    if (!res.empty()) {
      j[name] = res.back();
    } else {
      const std::string d = o->get_default_str();
      if (!d.empty()) j[name] = d;
    }
  }
  return j;
}

struct RunInfo {
  std::string command;
  json config;
  std::string hash;
  std::uint64_t seed = 0;
};

RunInfo announce(const CLI::App& sub, std::uint64_t seed) {
  RunInfo info;
  info.command = sub.get_name();
  info.config = resolved_config(sub);
  info.hash = hex64(fnv1a(info.command + info.config.dump()));
  info.seed = seed;
  json head{{"command", info.command}, {"config", info.config}, {"config_hash", info.hash}, {"seed", seed}};
  std::cout << head.dump() << std::endl;
  return info;
}

/// Expand a flat JSON config into `--key value` arguments.
std::vector<std::string> config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  std::vector<std::string> args;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string flag = "--" + it.key();
    const json& v = it.value();
    if (v.is_object() || v.is_array()) throw ConfigError("config key '" + it.key() + "' must be a scalar");
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back(flag);
      continue;
    }
    args.push_back(flag);
    if (v.is_string()) {
      args.push_back(v.get<std::string>());
    } else if (v.is_number_integer()) {
      args.push_back(std::to_string(v.get<long long>()));
    } else if (v.is_number_unsigned()) {
      args.push_back(std::to_string(v.get<unsigned long long>()));
    } else if (v.is_number()) {
      args.push_back(fmt(v.get<double>()));
    } else {
      throw ConfigError("config key '" + it.key() + "' has an unsupported value");
    }
  }
  return args;
}

ThresholdPolicy make_policy(const std::string& kind, double lambda, Index k) {
  if (kind == "fixed") return ThresholdPolicy::fixed(lambda);
  if (kind == "relative") return ThresholdPolicy::relative(lambda);
  if (kind == "k_best") return ThresholdPolicy::k_best(k);
  throw ConfigError("unknown threshold policy '" + kind + "'");
}

/// Per-dimension mean squared error.
double mse(const Matrix& a, const Matrix& b) {
  return a.size() ? (a - b).squaredNorm() / static_cast<double>(a.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// Model-generic coding
// ---------------------------------------------------------------------------

CodeFile encode_with(const Model& model, const Matrix& F, double query_scale, Index layers) {
  const Matrix Z = model.to_model_domain(F);
  CodeFile f;
  if (is_vq(model.kind)) {
    f.payload = CodePayload::indices;
    f.indices = rq_encode(Z, model.vq);
    if (layers >= 0 && layers < static_cast<Index>(f.indices.size())) f.indices.resize(static_cast<std::size_t>(layers));
    for (std::size_t l = 0; l < f.indices.size(); ++l) f.index_m.push_back(model.vq.layers[l].size());
  } else if (is_stc(model.kind)) {
    f.payload = CodePayload::ternary;
    f.ternary = query_scale == 1.0 ? mlstc_encode(Z, model.stc, layers) : mlstc_encode_query(Z, model.stc, query_scale, layers);
  } else {
    f.payload = CodePayload::binary;
    f.binary = binary_baseline_encode(Z, model.binary);
  }
  return f;
}

/// Reconstruction in the model domain.
Matrix decode_with(const Model& model, const CodeFile& codes, Index layers) {
  switch (codes.payload) {
    case CodePayload::indices:
      if (!is_vq(model.kind)) throw ConfigError("codes / model kind mismatch");
      return rq_decode(codes.indices, model.vq, layers < 0 ? static_cast<Index>(codes.indices.size()) : layers);
    case CodePayload::ternary:
      if (!is_stc(model.kind)) throw ConfigError("codes / model kind mismatch");
      return mlstc_decode(codes.ternary, model.stc, layers);
    case CodePayload::binary: {
      if (model.kind != ModelKind::binary_baseline) throw ConfigError("codes / model kind mismatch");
      Matrix out(model.binary.dim(), codes.binary.size());
      for (Index i = 0; i < codes.binary.size(); ++i) out.col(i) = binary_baseline_reconstruct(codes.binary, i, model.binary);
      return out;
    }
  }
  return {};
}

Index model_layers(const Model& m) {
  if (is_vq(m.kind)) return m.vq.num_layers();
  if (is_stc(m.kind)) return m.stc.num_layers();
  return 1;
}

double model_rate(const Model& m, Index l) {
  if (is_vq(m.kind)) {
    double r = 0.0;
    for (Index i = 0; i < l; ++i) r += m.vq.layer_rate(i);
    return r;
  }
  if (is_stc(m.kind)) return m.stc.cumulative_rate(l);
  return static_cast<double>(m.binary.code_length()) / static_cast<double>(m.binary.dim());
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct GenArgs {
  std::string source = "iid_gaussian";
  Index n = 0, N = 0;
  double variance = 1.0, rho = 0.0, decay = 0.01;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_gen(const CLI::App& sub, const GenArgs& a) {
  announce(sub, a.seed);
  SourceSpec s;
  s.kind = source_kind_from_string(a.source);
  s.n = a.n;
  s.variance = a.variance;
  s.rho = a.rho;
  s.decay_rate = a.decay;
  Rng rng(a.seed);
  const VectorSet set = generate(s, a.N, rng);
  save_vectors(a.out, set.data);
}

struct TrainArgs {
  std::string model = "mlstc";
  std::string train;
  std::string out;
  std::string whiten = "auto";
  Index height = 0, width = 0, bands = 1;
  Index L = 1, m = 256, k = 0;
  std::string policy = "relative";
  double lambda = 1.0;
  double mu = 0.1;
  Index mu_finite_layers = 5;
  double gamma_ratio = 1.0;
  int max_iter = 100;
  int procrustean_iter = 50;
  std::uint64_t seed = 0;
};

void cmd_train(const CLI::App& sub, const TrainArgs& a) {
  const RunInfo info = announce(sub, a.seed);
  const VectorSet F = load_vectors(a.train);
  if (F.size() < 2) throw DataError("train: need at least two training vectors");
  Model model;
  model.kind = model_kind_from_string(a.model);
  std::string whiten = a.whiten;
  if (whiten == "auto") whiten = (model.kind == ModelKind::vr_kmeans || model.kind == ModelKind::rrq) ? "pca" : "none";
  if (whiten == "pca") {
    model.whitener = fit_pca_whitener(F);
    model.has_whitener = true;
  } else if (whiten == "dct") {
    model.whitener = fit_dct_subband_whitener(F, a.height, a.width, a.bands);
    model.has_whitener = true;
  } else if (whiten != "none") {
    throw ConfigError("unknown whitener '" + whiten + "'");
  }
  const Matrix Z = model.to_model_domain(F.data);
  Rng rng(a.seed);
  KmeansOptions ko;
  ko.max_iter = a.max_iter;
  const ThresholdPolicy policy = make_policy(a.policy, a.lambda, a.k);
  switch (model.kind) {
    case ModelKind::kmeans: model.vq = rq_train(Z, 1, a.m, rng, ko); break;
    case ModelKind::rq: model.vq = rq_train(Z, a.L, a.m, rng, ko); break;
    case ModelKind::vr_kmeans:
    case ModelKind::rrq: {
      RrqOptions o;
      o.L = model.kind == ModelKind::vr_kmeans ? 1 : a.L;
      o.m = a.m;
      o.gamma_ratio = a.gamma_ratio;
      o.mu_schedule = default_mu_schedule(o.L, a.mu, a.mu_finite_layers);
      o.vr.max_iter = a.max_iter;
      model.vq = rrq_train(Z, o, rng);
      break;
    }
    case ModelKind::stc: model.stc = mlstc_train(Z, 1, policy); break;
    case ModelKind::mlstc: model.stc = mlstc_train(Z, a.L, policy); break;
    case ModelKind::mlstc_proc: {
      ProcrusteanOptions po;
      po.max_iter = a.procrustean_iter;
      model.stc = mlstc_train_procrustean(Z, a.L, policy, po);
      break;
    }
    case ModelKind::binary_baseline: model.binary = binary_baseline_train(Z, a.m, rng); break;
  }
  json meta{{"seed", a.seed}, {"config", info.config}, {"config_hash", info.hash}, {"train", a.train}};
  model.metadata = meta.dump();
  save_model(a.out, model);
}

struct CodeArgs {
  std::string model, input, codes, out;
  double query_scale = 1.0;
  Index layers = -1;
};

void cmd_encode(const CLI::App& sub, const CodeArgs& a) {
  announce(sub, 0);
  const Model model = load_model(a.model);
  const VectorSet F = load_vectors(a.input);
  save_codes(a.out, encode_with(model, F.data, a.query_scale, a.layers));
}

void cmd_decode(const CLI::App& sub, const CodeArgs& a) {
  announce(sub, 0);
  const Model model = load_model(a.model);
  const CodeFile codes = load_codes(a.codes);
  save_vectors(a.out, model.from_model_domain(decode_with(model, codes, a.layers)));
}

struct SearchArgs {
  std::string model, codes, queries, out;
  std::string database;  // eval-search: raw database vectors
  std::string cache_dir = ".";
  double nu_plus = 1.0, nu_minus = -4.0;
  double query_scale = 1.0;
  Index l_prime = 4;
  Index list_size = 512;
  Index refine_size = 0;  // 0 disables refinement
  Index T = 10, R = 1;
};

struct QueryRun {
  std::vector<SearchResult> results;
  SearchCounters counters;
};

QueryRun run_queries(const Model& model, const CodeFile& db, const Matrix& Qz, const SearchArgs& a) {
  QueryRun run;
  const VoteParams vp{a.nu_plus, a.nu_minus};
  if (db.payload == CodePayload::ternary) {
    if (!is_stc(model.kind)) throw ConfigError("codes / model kind mismatch");
    const TernaryIndex index = build_index(db.ternary, model.stc.per_layer_distortion, a.l_prime);
    const Index lp = std::min<Index>(a.l_prime, static_cast<Index>(db.ternary.size()));
    const auto qc = mlstc_encode_query(Qz, model.stc, a.query_scale, lp);
    for (Index q = 0; q < Qz.cols(); ++q) {
      std::vector<TernaryCode> y;
      for (const auto& set : qc) y.push_back(set.codes[static_cast<std::size_t>(q)]);
      SearchResult r = aggregate_search(y, index, vp, a.list_size, &run.counters);
      if (a.refine_size > 0) r = refine(Qz.col(q), r, model.stc, db.ternary, a.refine_size, &run.counters);
      run.results.push_back(std::move(r));
    }
  } else if (db.payload == CodePayload::binary) {
    if (model.kind != ModelKind::binary_baseline) throw ConfigError("codes / model kind mismatch");
    const BinaryCodeSet qc = binary_baseline_encode(Qz, model.binary);
    for (Index q = 0; q < Qz.cols(); ++q) {
      SearchResult r = binary_baseline_search(db.binary, qc, q, a.list_size, &run.counters);
      if (a.refine_size > 0)
        r = refine(Qz.col(q), r, [&](Index id) { return binary_baseline_reconstruct(db.binary, id, model.binary); },
                   a.refine_size, &run.counters);
      run.results.push_back(std::move(r));
    }
  } else {
    if (!is_vq(model.kind)) throw ConfigError("codes / model kind mismatch");
    // Codeword indices have no sign structure to vote on: exhaustive scan of reconstructions.
    SearchResult all;
    for (Index i = 0; i < db.size(); ++i) all.ids.push_back(i);
    all.scores.assign(all.ids.size(), 0.0);
    const Index keep = a.refine_size > 0 ? a.refine_size : a.list_size;
    for (Index q = 0; q < Qz.cols(); ++q)
      run.results.push_back(refine(Qz.col(q), all, model.vq, db.indices, keep, &run.counters));
  }
  return run;
}

void cmd_search(const CLI::App& sub, const SearchArgs& a) {
  const RunInfo info = announce(sub, 0);
  const Model model = load_model(a.model);
  const CodeFile db = load_codes(a.codes);
  const VectorSet Q = load_vectors(a.queries);
  const QueryRun run = run_queries(model, db, model.to_model_domain(Q.data), a);
  std::ofstream out = open_csv(a.out);
  out << "config_hash,query_id,rank,id,score,stage\n";
  for (std::size_t q = 0; q < run.results.size(); ++q) {
    const SearchResult& r = run.results[q];
    for (std::size_t k = 0; k < r.ids.size(); ++k)
      out << info.hash << ',' << q << ',' << k << ',' << r.ids[k] << ',' << fmt(r.scores[k]) << ','
          << (r.stage == SearchStage::refined ? "refined" : "initial") << '\n';
  }
}

std::string matrix_digest(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(m.rows()));
  mix(static_cast<std::uint64_t>(m.cols()));
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) mix(std::bit_cast<std::uint64_t>(m(i, j)));
  return hex64(h);
}

/// Exact neighbours, cached on disk keyed by a digest of both sets and k.
std::vector<std::vector<Index>> ground_truth(const Matrix& db, const Matrix& Q, Index k, const std::string& dir) {
  const std::string key = hex64(fnv1a(matrix_digest(db) + matrix_digest(Q) + std::to_string(k)));
  const std::filesystem::path path = std::filesystem::path(dir) / ("gt_" + key + ".json");
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    json j;
    in >> j;
    return j.get<std::vector<std::vector<Index>>>();
  }
  auto gt = brute_force_knn(db, Q, k);
  std::ofstream out(path);
  if (out) out << json(gt).dump();
  return gt;
}

void cmd_eval_search(const CLI::App& sub, const SearchArgs& a) {
  const RunInfo info = announce(sub, 0);
  const Model model = load_model(a.model);
  const VectorSet D = load_vectors(a.database);
  const VectorSet Q = load_vectors(a.queries);
  if (Q.size() == 0) throw DataError("eval-search: empty query set");
  const CodeFile db = a.codes.empty() ? encode_with(model, D.data, 1.0, -1) : load_codes(a.codes);
  if (db.size() != D.size()) throw DataError("eval-search: codes and database sizes differ");
  const auto gt = ground_truth(D.data, Q.data, std::max(a.T, a.R), a.cache_dir);
  const QueryRun run = run_queries(model, db, model.to_model_domain(Q.data), a);
  std::ofstream out = open_csv(a.out);
  out << "config_hash,query_id,metric,value\n";
  for (std::size_t q = 0; q < run.results.size(); ++q) {
    out << info.hash << ',' << q << ",ap_at_t," << fmt(average_precision(run.results[q].ids, gt[q], a.T)) << '\n';
    out << info.hash << ',' << q << ",recall_r_at_t," << fmt(recall_at(run.results[q].ids, gt[q], a.R, a.T)) << '\n';
    out << info.hash << ',' << q << ",p_id," << fmt(recall_at(run.results[q].ids, gt[q], 1, 1)) << '\n';
  }
  const SearchMetrics m = evaluate(run.results, gt, a.T, a.R);
  const double nq = static_cast<double>(Q.size());
  const double base = static_cast<double>(D.size()) * static_cast<double>(D.dim());
  out << info.hash << ",all,map_at_t," << fmt(m.map_at_t) << '\n';
  out << info.hash << ",all,recall_r_at_t," << fmt(m.recall_r_at_t) << '\n';
  out << info.hash << ",all,p_id," << fmt(m.p_id) << '\n';
  out << info.hash << ",all,vote_touches_per_query," << fmt(static_cast<double>(run.counters.vote_touches) / nq) << '\n';
  out << info.hash << ",all,float_distance_evals_per_query,"
      << fmt(static_cast<double>(run.counters.float_distance_evals) / nq) << '\n';
  out << info.hash << ",all,hamming_word_ops_per_query,"
      << fmt(static_cast<double>(run.counters.hamming_word_ops) / nq) << '\n';
  const double work = static_cast<double>(run.counters.vote_touches) +
                      static_cast<double>(run.counters.float_distance_evals) * static_cast<double>(D.dim()) +
                      static_cast<double>(run.counters.hamming_word_ops);
  out << info.hash << ",all,complexity_ratio," << fmt(work / nq / base) << '\n';
}

struct EvalRdArgs {
  std::string model, train, test, out;
};

void cmd_eval_rd(const CLI::App& sub, const EvalRdArgs& a) {
  const RunInfo info = announce(sub, 0);
  const Model model = load_model(a.model);
  const VectorSet Ftr = load_vectors(a.train);
  const VectorSet Fte = a.test.empty() ? Ftr : load_vectors(a.test);
  const Matrix Ztr = model.to_model_domain(Ftr.data);
  const Matrix Zte = model.to_model_domain(Fte.data);
  const CodeFile ctr = encode_with(model, Ftr.data, 1.0, -1);
  const CodeFile cte = encode_with(model, Fte.data, 1.0, -1);
  // Variances for the bound: eigenvalues of the centered training covariance.
  const Vector var = Ftr.size() >= 2 ? sym_eig(sample_covariance(Ftr.data, true)).eigenvalues.cwiseMax(0.0)
                                     : Vector(Vector::Zero(Ftr.dim()));
  std::ofstream out = open_csv(a.out);
  out << "config_hash,method,layer,rate_bits_per_dim,train_D,test_D,slb_D\n";
  for (Index l = 1; l <= model_layers(model); ++l) {
    const Index up = model.kind == ModelKind::binary_baseline ? -1 : l;
    const double r = model_rate(model, l);
    out << info.hash << ',' << to_string(model.kind) << ',' << l << ',' << fmt(r) << ','
        << fmt(mse(Ztr, decode_with(model, ctr, up))) << ',' << fmt(mse(Zte, decode_with(model, cte, up))) << ','
        << fmt(shannon_lower_bound(var, r)) << '\n';
  }
}

struct InfogainArgs {
  double sigma2 = 1.0;
  double snr_db = 10.0;
  double sigma_p2 = -1.0;  // overrides snr_db when >= 0
  double lambda_min = 0.0, lambda_max = 3.0;
  int steps = 31;
  int grid = 101;
  std::string out;
};

void cmd_infogain(const CLI::App& sub, const InfogainArgs& a) {
  const RunInfo info = announce(sub, 0);
  const double sp = a.sigma_p2 >= 0.0 ? a.sigma_p2 : a.sigma2 * std::pow(10.0, -a.snr_db / 10.0);
  if (a.steps < 1) throw ConfigError("infogain: steps must be >= 1");
  std::ofstream out = open_csv(a.out);
  out << "config_hash,code,lambda_x,lambda_y_star,H,I,g\n";
  const BinaryChannelInfo b = binary_bsc(a.sigma2, sp);
  out << info.hash << ",binary,0,0," << fmt(b.entropy) << ',' << fmt(b.mutual_information) << ','
      << fmt(b.mutual_information / b.entropy) << '\n';
  const auto grid = default_lambda_y_grid(a.sigma2, sp, a.grid);
  for (int i = 0; i < a.steps; ++i) {
    const double lx = a.steps == 1 ? a.lambda_min : a.lambda_min + (a.lambda_max - a.lambda_min) * i / (a.steps - 1);
    const double ly = optimize_lambda_y(a.sigma2, sp, lx, grid);
    const TernaryChannel ch = build_channel(a.sigma2, sp, lx, ly);
    const double h = entropy_x(ch);
    if (h <= 0.0) continue;
    out << info.hash << ",ternary," << fmt(lx) << ',' << fmt(ly) << ',' << fmt(h) << ','
        << fmt(mutual_information(ch)) << ',' << fmt(coding_gain(ch)) << '\n';
  }
}

struct InverseArgs {
  std::string model, signal, operator_path, observation, out, trace;
  Index signal_index = 0;
  Index l = 0;
  double sigma_p2 = 0.0, mu = 0.0, mu_sobolev = 0.0, tau = 0.0, tol = 1e-6;
  Index height = 0, width = 0, layers = -1;
  int max_iter = 500;
  std::string init = "pseudo_inverse";
  std::uint64_t seed = 0;
};

void cmd_inverse(const CLI::App& sub, const InverseArgs& a) {
  const RunInfo info = announce(sub, a.seed);
  Model model;
  Compressor h;
  if (!a.model.empty()) {
    model = load_model(a.model);
    const Whitener* w = model.has_whitener ? &model.whitener : nullptr;
    if (is_stc(model.kind)) h = make_compressor(model.stc, w, a.layers);
    else if (is_vq(model.kind)) h = make_compressor(model.vq, w, a.layers);
    else throw ConfigError("inverse: binary baseline cannot act as a compressor");
  } else if (a.mu > 0.0) {
    throw ConfigError("inverse: mu > 0 needs --model");
  }
  Rng rng(a.seed);
  InverseProblem p;
  Vector f_true;
  bool have_truth = false;
  if (!a.signal.empty()) {
    const VectorSet S = load_vectors(a.signal);
    if (a.signal_index < 0 || a.signal_index >= S.size()) throw ConfigError("inverse: signal index out of range");
    f_true = S.data.col(a.signal_index);
    have_truth = true;
  }
  if (!a.operator_path.empty()) {
    const VectorSet T = load_vectors(a.operator_path);  // one record per row of T
    p.T = T.data.transpose();
    if (!a.observation.empty()) {
      const VectorSet q = load_vectors(a.observation);
      if (q.size() != 1) throw DataError("inverse: observation file must hold one vector");
      p.q = q.data.col(0);
    } else if (have_truth) {
      if (f_true.size() != p.T.cols()) throw DataError("inverse: operator / signal dimension mismatch");
      p.q = p.T * f_true;
      for (Index i = 0; i < p.q.size(); ++i) p.q(i) += std::sqrt(a.sigma_p2) * rng.normal();
    } else {
      throw ConfigError("inverse: need --observation or --signal");
    }
    p.sigma_p2 = a.sigma_p2;
  } else {
    if (!have_truth) throw ConfigError("inverse: need --signal to synthesize a problem");
    p = make_cs_problem(f_true.size(), a.l > 0 ? a.l : f_true.size(), a.sigma_p2, rng, f_true);
  }
  p.mu = a.mu;
  p.mu_sobolev = a.mu_sobolev;
  p.height = a.height;
  p.width = a.width;
  p.tau = a.tau;
  p.max_iter = a.max_iter;
  p.tol = a.tol;
  if (a.init == "pseudo_inverse") p.init = InitKind::pseudo_inverse;
  else if (a.init == "adjoint") p.init = InitKind::adjoint;
  else throw ConfigError("inverse: unknown init '" + a.init + "'");
  const SolveResult res = solve(p, h, have_truth ? &f_true : nullptr, a.seed);
  if (!a.trace.empty()) {
    std::ofstream out = open_csv(a.trace);
    out << "config_hash,iteration,objective,mse\n";
    for (std::size_t i = 0; i < res.trace.objective.size(); ++i)
      out << info.hash << ',' << i << ',' << fmt(res.trace.objective[i]) << ','
          << (i < res.trace.mse.size() ? fmt(res.trace.mse[i]) : std::string("nan")) << '\n';
  }
  if (!a.out.empty()) save_vectors(a.out, Matrix(res.f));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse ternary codes, regularized quantizers and similarity search"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  int threads = 1;
  app.add_option("--threads", threads, "Worker bound (results do not depend on it)")->check(CLI::PositiveNumber);

  auto add_config = [](CLI::App* s) {
    s->add_option("--config", "Flat JSON file of option values; command-line flags take precedence");
  };

  GenArgs gen;
  CLI::App* s_gen = app.add_subcommand("gen", "Generate a synthetic Gaussian source");
  add_config(s_gen);
  s_gen->add_option("--source", gen.source, "iid_gaussian | var_decay | ar1")->capture_default_str();
  s_gen->add_option("--n", gen.n, "Dimension")->required();
  s_gen->add_option("--N", gen.N, "Number of samples")->required();
  s_gen->add_option("--variance", gen.variance)->capture_default_str();
  s_gen->add_option("--rho", gen.rho, "AR(1) correlation")->capture_default_str();
  s_gen->add_option("--decay", gen.decay, "var_decay rate")->capture_default_str();
  s_gen->add_option("--seed", gen.seed)->capture_default_str();
  s_gen->add_option("--out", gen.out, "Output .fvecs")->required();

  TrainArgs tr;
  CLI::App* s_train = app.add_subcommand("train", "Train a model and write an STCM container");
  add_config(s_train);
  s_train->add_option("--model", tr.model, "kmeans | vr_kmeans | rq | rrq | stc | mlstc | mlstc_proc | binary_baseline")
      ->capture_default_str();
  s_train->add_option("--train", tr.train, "Training vectors")->required();
  s_train->add_option("--out", tr.out, "Model file")->required();
  s_train->add_option("--whiten", tr.whiten, "auto | none | pca | dct")->capture_default_str();
  s_train->add_option("--height", tr.height, "Image height for dct whitening")->capture_default_str();
  s_train->add_option("--width", tr.width, "Image width for dct whitening")->capture_default_str();
  s_train->add_option("--bands", tr.bands, "Sub-band count for dct whitening")->capture_default_str();
  s_train->add_option("--L", tr.L, "Layers")->capture_default_str();
  s_train->add_option("--m", tr.m, "Codewords per layer (VQ) or code length (binary)")->capture_default_str();
  s_train->add_option("--policy", tr.policy, "fixed | relative | k_best")->capture_default_str();
  s_train->add_option("--lambda", tr.lambda, "Threshold (fixed) or ratio to RMS std (relative)")->capture_default_str();
  s_train->add_option("--k", tr.k, "Non-zeros per code for k_best")->capture_default_str();
  s_train->add_option("--mu", tr.mu, "Variance regularization weight")->capture_default_str();
  s_train->add_option("--mu-finite-layers", tr.mu_finite_layers, "RRQ layers before mu becomes infinite")
      ->capture_default_str();
  s_train->add_option("--gamma-ratio", tr.gamma_ratio, "Active-set ratio gamma'")->capture_default_str();
  s_train->add_option("--max-iter", tr.max_iter)->capture_default_str();
  s_train->add_option("--procrustean-iter", tr.procrustean_iter)->capture_default_str();
  s_train->add_option("--seed", tr.seed)->capture_default_str();

  CodeArgs enc;
  CLI::App* s_enc = app.add_subcommand("encode", "Encode vectors with a trained model");
  add_config(s_enc);
  s_enc->add_option("--model", enc.model)->required();
  s_enc->add_option("--input", enc.input)->required();
  s_enc->add_option("--out", enc.out, "STCX codes file")->required();
  s_enc->add_option("--query-scale", enc.query_scale, "Threshold scale for query-side ternary codes")
      ->capture_default_str();
  s_enc->add_option("--layers", enc.layers, "Encode only the first layers (-1: all)")->capture_default_str();

  CodeArgs dec;
  CLI::App* s_dec = app.add_subcommand("decode", "Reconstruct vectors from codes");
  add_config(s_dec);
  s_dec->add_option("--model", dec.model)->required();
  s_dec->add_option("--codes", dec.codes)->required();
  s_dec->add_option("--out", dec.out, "Output .fvecs")->required();
  s_dec->add_option("--layers", dec.layers, "Decode only the first layers (-1: all)")->capture_default_str();

  auto add_search_opts = [](CLI::App* s, SearchArgs& a) {
    s->add_option("--model", a.model)->required();
    s->add_option("--queries", a.queries)->required();
    s->add_option("--out", a.out)->required();
    s->add_option("--nu-plus", a.nu_plus)->capture_default_str();
    s->add_option("--nu-minus", a.nu_minus)->capture_default_str();
    s->add_option("--query-scale", a.query_scale)->capture_default_str();
    s->add_option("--l-prime", a.l_prime, "Layers that vote")->capture_default_str();
    s->add_option("--list-size", a.list_size, "Initial list size")->capture_default_str();
    s->add_option("--refine-size", a.refine_size, "Refined list size (0: no refinement)")->capture_default_str();
  };

  SearchArgs se;
  CLI::App* s_search = app.add_subcommand("search", "Search a coded database");
  add_config(s_search);
  add_search_opts(s_search, se);
  s_search->add_option("--codes", se.codes, "Database codes (STCX)")->required();

  SearchArgs es;
  CLI::App* s_es = app.add_subcommand("eval-search", "Search metrics against exact neighbours");
  add_config(s_es);
  add_search_opts(s_es, es);
  s_es->add_option("--database", es.database, "Database vectors")->required();
  s_es->add_option("--codes", es.codes, "Database codes (encoded on the fly when absent)");
  s_es->add_option("--cache-dir", es.cache_dir, "Ground-truth cache directory")->capture_default_str();
  s_es->add_option("--T", es.T, "List length for mAP / recall")->capture_default_str();
  s_es->add_option("--R", es.R, "Top-R neighbours for recall")->capture_default_str();

  EvalRdArgs rd;
  CLI::App* s_rd = app.add_subcommand("eval-rd", "Rate-distortion curve per layer");
  add_config(s_rd);
  s_rd->add_option("--model", rd.model)->required();
  s_rd->add_option("--train", rd.train)->required();
  s_rd->add_option("--test", rd.test);
  s_rd->add_option("--out", rd.out)->required();

  InfogainArgs ig;
  CLI::App* s_ig = app.add_subcommand("infogain", "Entropy, mutual information and coding gain tables");
  add_config(s_ig);
  s_ig->add_option("--sigma2", ig.sigma2)->capture_default_str();
  s_ig->add_option("--snr-db", ig.snr_db)->capture_default_str();
  s_ig->add_option("--sigma-p2", ig.sigma_p2, "Noise variance (overrides --snr-db when >= 0)")->capture_default_str();
  s_ig->add_option("--lambda-min", ig.lambda_min)->capture_default_str();
  s_ig->add_option("--lambda-max", ig.lambda_max)->capture_default_str();
  s_ig->add_option("--steps", ig.steps)->capture_default_str();
  s_ig->add_option("--grid", ig.grid, "lambda_Y grid points")->capture_default_str();
  s_ig->add_option("--out", ig.out)->required();

  InverseArgs inv;
  CLI::App* s_inv = app.add_subcommand("inverse", "Recover a signal with a compressibility prior");
  add_config(s_inv);
  s_inv->add_option("--model", inv.model, "Compressor model");
  s_inv->add_option("--signal", inv.signal, "Ground-truth vectors (.fvecs)");
  s_inv->add_option("--signal-index", inv.signal_index)->capture_default_str();
  s_inv->add_option("--operator", inv.operator_path, "Sampling operator, one .fvecs record per row");
  s_inv->add_option("--observation", inv.observation, "Observation q (.fvecs, one record)");
  s_inv->add_option("--l", inv.l, "Measurements for a synthesized Gaussian operator")->capture_default_str();
  s_inv->add_option("--sigma-p2", inv.sigma_p2)->capture_default_str();
  s_inv->add_option("--mu", inv.mu)->capture_default_str();
  s_inv->add_option("--mu-sobolev", inv.mu_sobolev)->capture_default_str();
  s_inv->add_option("--height", inv.height)->capture_default_str();
  s_inv->add_option("--width", inv.width)->capture_default_str();
  s_inv->add_option("--tau", inv.tau, "Step size (0: default)")->capture_default_str();
  s_inv->add_option("--tol", inv.tol)->capture_default_str();
  s_inv->add_option("--max-iter", inv.max_iter)->capture_default_str();
  s_inv->add_option("--layers", inv.layers, "Compressor layers (-1: all)")->capture_default_str();
  s_inv->add_option("--init", inv.init, "pseudo_inverse | adjoint")->capture_default_str();
  s_inv->add_option("--seed", inv.seed)->capture_default_str();
  s_inv->add_option("--out", inv.out, "Recovered signal (.fvecs)");
  s_inv->add_option("--trace", inv.trace, "Per-iteration CSV");

  try {
    // Splice config-file values in front of the subcommand's own flags so the
    // latter win.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> merged;
    std::size_t sub_pos = args.size();
    for (std::size_t i = 0; i < args.size(); ++i)
      if (!args[i].empty() && args[i][0] != '-' && (i == 0 || args[i - 1] != "--threads")) {
        sub_pos = i;
        break;
      }
    std::vector<std::string> cfg;
    for (std::size_t i = sub_pos; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) cfg = config_args(args[i + 1]);
      else if (args[i].rfind("--config=", 0) == 0) cfg = config_args(args[i].substr(9));
    }
    for (std::size_t i = 0; i < args.size(); ++i) {
      merged.push_back(args[i]);
      if (i == sub_pos) merged.insert(merged.end(), cfg.begin(), cfg.end());
    }
    std::vector<std::string> reversed(merged.rbegin(), merged.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  } catch (const stc::Error& e) {
    std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << std::endl;
    return e.exit_code();
  }

  try {
    if (*s_gen) cmd_gen(*s_gen, gen);
    else if (*s_train) cmd_train(*s_train, tr);
    else if (*s_enc) cmd_encode(*s_enc, enc);
    else if (*s_dec) cmd_decode(*s_dec, dec);
    else if (*s_search) cmd_search(*s_search, se);
    else if (*s_es) cmd_eval_search(*s_es, es);
    else if (*s_rd) cmd_eval_rd(*s_rd, rd);
    else if (*s_ig) cmd_infogain(*s_ig, ig);
    else if (*s_inv) cmd_inverse(*s_inv, inv);
  } catch (const stc::Error& e) {
    const char* kind = e.category() == stc::Error::Category::config ? "config"
                       : e.category() == stc::Error::Category::data ? "data"
                                                                    : "numerical";
    std::cerr << json{{"error", kind}, {"message", e.what()}}.dump() << std::endl;
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "numerical"}, {"message", e.what()}}.dump() << std::endl;
    return 4;
  }
  return 0;
}
