// Command-line front end: fit / impute / sample / generate / mask / evaluate
// workflows plus the synthetic benchmark grid.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "egc/bench.hpp"
#include "egc/dataset.hpp"
#include "egc/em.hpp"
#include "egc/impute.hpp"
#include "egc/model.hpp"
#include "egc/rng.hpp"
#include "egc/version.hpp"

namespace {

using namespace egc;

std::string flag_echo(int argc, char** argv) {
  std::ostringstream os;
  for (int i = 1; i < argc; ++i) {
    if (i > 1) os << ' ';
    os << argv[i];
  }
  return os.str();
}

std::string header_comment(std::uint64_t seed, const std::string& echo) {
  std::ostringstream os;
  os << "egc v" << kVersion << " seed=" << seed << " cmd: " << echo;
  return os.str();
}

// Remaps categories with empirical frequency below the threshold into the
// column's most frequent category, shrinking the schema accordingly.
struct MergeReport {
  VariableSchema schema;
  bool merged = false;
};

MergeReport merge_rare_categories(MixedDataset& data, double threshold) {
  MergeReport rep;
  std::vector<VariableSpec> specs;
  bool merged_any = false;
  for (Eigen::Index j = 0; j < data.schema.size(); ++j) {
    const auto& v = data.schema.var(j);
    if (v.kind != VarKind::Categorical) {
      specs.push_back(v);
      continue;
    }
    const int k = v.category_count();
    std::vector<long> counts(static_cast<std::size_t>(k), 0);
    long n = 0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      if (data.missing(i, j)) continue;
      ++counts[static_cast<std::size_t>(data.values(i, j)) - 1];
      ++n;
    }
    const long mode =
        std::distance(counts.begin(), std::max_element(counts.begin(), counts.end()));
    std::vector<bool> rare(static_cast<std::size_t>(k), false);
    bool any = false;
    for (int c = 0; c < k; ++c) {
      const double freq = n > 0 ? static_cast<double>(counts[static_cast<std::size_t>(c)]) /
                                      static_cast<double>(n)
                                : 0.0;
      if (c != mode && freq < threshold) {
        rare[static_cast<std::size_t>(c)] = true;
        any = true;
      }
    }
    if (!any) {
      specs.push_back(v);
      continue;
    }
    merged_any = true;
    std::vector<std::string> labels;
    std::vector<int> code_map(static_cast<std::size_t>(k), 0);  // old -> new (1-based)
    for (int c = 0; c < k; ++c) {
      if (rare[static_cast<std::size_t>(c)]) continue;
      labels.push_back(v.labels[static_cast<std::size_t>(c)]);
      code_map[static_cast<std::size_t>(c)] = static_cast<int>(labels.size());
    }
    for (int c = 0; c < k; ++c)
      if (rare[static_cast<std::size_t>(c)]) {
        code_map[static_cast<std::size_t>(c)] = code_map[static_cast<std::size_t>(mode)];
        std::cerr << "merge-rare: '" << v.name << "' label '"
                  << v.labels[static_cast<std::size_t>(c)] << "' merged into '"
                  << v.labels[static_cast<std::size_t>(mode)] << "'\n";
      }
    for (Eigen::Index i = 0; i < data.rows(); ++i)
      if (!data.missing(i, j))
        data.values(i, j) = code_map[static_cast<std::size_t>(data.values(i, j)) - 1];
    specs.push_back(VariableSpec::categorical(v.name, std::move(labels)));
  }
  rep.schema = VariableSchema(std::move(specs));
  rep.merged = merged_any;
  if (merged_any) data.schema = rep.schema;
  return rep;
}

struct CommonOpts {
  std::string data_path, schema_path, missing;
  int threads = 0;
};

MixedDataset load(const CommonOpts& o) {
  const auto schema = load_schema(o.schema_path);
  return load_dataset(o.data_path, schema, o.missing);
}

void write_metrics_header(std::ostream& os, const std::string& comment) {
  os << "# " << comment << '\n';
  os << "n,pcat,K,mechanism,alpha,seed,method,metric,value\n";
}

void write_metrics_rows(std::ostream& os, Eigen::Index n, int pcat, int k,
                        const std::string& mechanism, double alpha, std::uint64_t seed,
                        const std::string& method, const Metrics& m) {
  auto row = [&](const std::string& metric, double value) {
    os << n << ',' << pcat << ',' << k << ',' << mechanism << ',' << alpha << ',' << seed << ','
       << method << ',' << metric << ',' << format_double(value) << '\n';
  };
  row("me_cat", m.me_cat);
  row("mae_cont", m.mae_cont);
  row("mae_ord", m.mae_ord);
  row("sme", m.sme);
  row("smae", m.smae);
}

void print_metrics_table(std::ostream& os, const Metrics& m) {
  os << "class      error    scaled\n";
  os << "cat   " << m.me_cat << "  " << m.sme << "\n";
  os << "cont  " << m.mae_cont << "  (smae over ordered: " << m.smae << ")\n";
  os << "ord   " << m.mae_ord << "\n";
  os << "per-variable:\n";
  for (const auto& pv : m.per_variable)
    os << "  " << pv.name << "  cells=" << pv.cells << "  error=" << pv.error
       << "  baseline=" << pv.baseline_error << "\n";
}

int cmd_fit(const CommonOpts& common, const std::string& out, FitConfig cfg, bool merge_rare,
            const std::string& echo) {
  auto data = load(common);
  cfg.threads = common.threads;
  std::string schema_out;
  if (merge_rare) {
    const auto rep = merge_rare_categories(data, cfg.marginal.rare_threshold);
    if (rep.merged) {
      schema_out = out + ".schema";
      save_schema(data.schema, schema_out);
      std::cerr << "merge-rare: reduced schema written to " << schema_out << "\n";
    }
  }
  cfg.log = &std::cerr;
  FitReport report;
  const auto model = fit(data, cfg, &report);
  save_model(model, out);
  const double total = report.marginal_seconds + report.em_seconds;
  std::cerr << "fit: " << report.iterations << " iterations, marginal "
            << report.marginal_seconds << " s (" << 100.0 * report.marginal_seconds /
                                                        std::max(total, 1e-12)
            << "% of total), em " << report.em_seconds << " s\n";
  if (cfg.loglik_samples > 0)
    std::cerr << "fit: final loglik " << report.final_loglik << " (se "
              << report.final_loglik_stderr << ")\n";
  std::cerr << "fit: model written to " << out << "\n";
  (void)echo;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"extended Gaussian copula imputation for mixed data"};
  app.set_version_flag("--version", std::string("egc ") + egc::kVersion);
  app.require_subcommand(1);

  const std::string echo = flag_echo(argc, argv);

  CommonOpts common;
  app.add_option("--threads", common.threads, "worker threads (0 = all cores)");

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "estimate marginals and the latent correlation");
  FitConfig fit_cfg;
  std::string fit_out;
  bool merge_rare = false;
  int loglik_samples = 500;
  fit_cmd->add_option("--data", common.data_path)->required();
  fit_cmd->add_option("--schema", common.schema_path)->required();
  fit_cmd->add_option("--out", fit_out)->required();
  fit_cmd->add_option("--seed", fit_cfg.seed);
  fit_cmd->add_option("--max-iters", fit_cfg.max_iterations);
  fit_cmd->add_option("--tol", fit_cfg.tol);
  fit_cmd->add_option("--rank", fit_cfg.rank);
  fit_cmd->add_option("--minibatch", fit_cfg.minibatch);
  fit_cmd->add_option("--gamma-c", fit_cfg.gamma_c);
  fit_cmd->add_option("--mc-samples", fit_cfg.marginal.mc_samples, "marginal solver M");
  fit_cmd->add_option("--beta", fit_cfg.marginal.beta, "softmax inverse temperature");
  fit_cmd->add_option("--loglik-samples", loglik_samples, "MC loglik samples (0 = off)");
  fit_cmd->add_option("--missing", common.missing, "missing-cell sentinel");
  fit_cmd->add_flag("--merge-rare", merge_rare, "merge rare categories into the mode");

  // ---- impute ----
  auto* imp_cmd = app.add_subcommand("impute", "single imputation via latent conditional means");
  std::string model_path, imp_out;
  std::uint64_t imp_seed = 1;
  imp_cmd->add_option("--data", common.data_path)->required();
  imp_cmd->add_option("--schema", common.schema_path)->required();
  imp_cmd->add_option("--model", model_path)->required();
  imp_cmd->add_option("--out", imp_out)->required();
  imp_cmd->add_option("--seed", imp_seed);
  imp_cmd->add_option("--missing", common.missing);

  // ---- sample ----
  auto* sam_cmd = app.add_subcommand("sample", "multiple imputation draws");
  std::string sam_out, summary_out;
  int sam_m = 20;
  double sam_alpha = 0.05;
  std::uint64_t sam_seed = 1;
  sam_cmd->add_option("--data", common.data_path)->required();
  sam_cmd->add_option("--schema", common.schema_path)->required();
  sam_cmd->add_option("--model", model_path)->required();
  sam_cmd->add_option("--out", sam_out, "output base path; files get _s<k>.csv")->required();
  sam_cmd->add_option("--m", sam_m, "number of completions");
  sam_cmd->add_option("--seed", sam_seed);
  sam_cmd->add_option("--alpha", sam_alpha, "interval level for --summary");
  sam_cmd->add_option("--summary", summary_out, "uncertainty summary CSV");
  sam_cmd->add_option("--missing", common.missing);

  // ---- generate ----
  auto* gen_cmd = app.add_subcommand("generate", "synthetic data from the model");
  long gen_n = 2000;
  int gen_pcat = 5, gen_k = 6, gen_ncont = 5, gen_nord = 5;
  std::uint64_t gen_seed = 1;
  GeneratorParams gen_params;
  std::string gen_data, gen_schema, gen_model;
  gen_cmd->add_option("--n", gen_n)->required();
  gen_cmd->add_option("--pcat", gen_pcat);
  gen_cmd->add_option("--K", gen_k);
  gen_cmd->add_option("--ncont", gen_ncont);
  gen_cmd->add_option("--nord", gen_nord);
  gen_cmd->add_option("--seed", gen_seed);
  gen_cmd->add_option("--exp-scale", gen_params.exp_scale);
  gen_cmd->add_option("--ridge", gen_params.ridge);
  gen_cmd->add_option("--out-data", gen_data)->required();
  gen_cmd->add_option("--out-schema", gen_schema)->required();
  gen_cmd->add_option("--out-model", gen_model, "ground-truth model file");

  // ---- mask ----
  auto* mask_cmd = app.add_subcommand("mask", "hide observed cells by a missingness mechanism");
  std::string mech_name = "mcar", mask_out, mask_cells_out;
  MaskSpec mask_spec;
  mask_cmd->add_option("--data", common.data_path)->required();
  mask_cmd->add_option("--schema", common.schema_path)->required();
  mask_cmd->add_option("--mechanism", mech_name, "mcar|mar|mnar");
  mask_cmd->add_option("--alpha", mask_spec.alpha)->required();
  mask_cmd->add_option("--seed", mask_spec.seed);
  mask_cmd->add_option("--out", mask_out)->required();
  mask_cmd->add_option("--out-mask", mask_cells_out, "masked cell index CSV");
  mask_cmd->add_option("--missing", common.missing);

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "imputation error metrics on masked cells");
  std::string truth_path, imputed_path, mask_path, baseline_path, metrics_out;
  eval_cmd->add_option("--truth", truth_path)->required();
  eval_cmd->add_option("--imputed", imputed_path)->required();
  eval_cmd->add_option("--schema", common.schema_path)->required();
  eval_cmd->add_option("--mask", mask_path)->required();
  eval_cmd->add_option("--baseline", baseline_path, "baseline-imputed CSV (default: internal)");
  eval_cmd->add_option("--out", metrics_out)->required();
  eval_cmd->add_option("--missing", common.missing);

  // ---- bench ----
  auto* bench_cmd = app.add_subcommand("bench", "synthetic protocol grid");
  std::string bench_out;
  long bench_n = 2000;
  int bench_seeds = 10;
  std::vector<int> bench_pcat{1, 3, 5};
  std::vector<int> bench_k{3, 6, 9};
  std::vector<std::string> bench_mechs{"mcar", "mar", "mnar"};
  std::vector<double> bench_alphas{0.2, 0.3, 0.4};
  std::uint64_t bench_seed = 1;
  GeneratorParams bench_params;
  bench_cmd->add_option("--out", bench_out)->required();
  bench_cmd->add_option("--n", bench_n);
  bench_cmd->add_option("--seeds", bench_seeds, "repetitions per cell");
  bench_cmd->add_option("--pcat", bench_pcat)->delimiter(',');
  bench_cmd->add_option("--K", bench_k)->delimiter(',');
  bench_cmd->add_option("--mechanisms", bench_mechs)->delimiter(',');
  bench_cmd->add_option("--alphas", bench_alphas)->delimiter(',');
  bench_cmd->add_option("--seed", bench_seed, "base seed");
  bench_cmd->add_option("--exp-scale", bench_params.exp_scale);
  bench_cmd->add_option("--ridge", bench_params.ridge);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit_cmd) {
      FitConfig cfg = fit_cfg;
      cfg.loglik_samples = loglik_samples;
      return cmd_fit(common, fit_out, cfg, merge_rare, echo);
    }

    if (*imp_cmd) {
      const auto data = load(common);
      const auto model = load_model(model_path, data.schema);
      const auto out = single_impute(data, model);
      save_dataset(out, imp_out, common.missing, header_comment(imp_seed, echo));
      return 0;
    }

    if (*sam_cmd) {
      const auto data = load(common);
      const auto model = load_model(model_path, data.schema);
      const auto mi = multiple_impute(data, model, sam_m, sam_seed);
      for (int s = 0; s < sam_m; ++s) {
        std::ostringstream path;
        path << sam_out << "_s" << (s + 1) << ".csv";
        save_dataset(mi.completions[static_cast<std::size_t>(s)], path.str(), common.missing,
                     header_comment(sam_seed, echo));
      }
      if (!summary_out.empty()) {
        const auto summary = summarize_uncertainty(mi, sam_alpha);
        std::ofstream os(summary_out);
        if (!os) throw std::runtime_error("cannot write " + summary_out);
        os << "# " << header_comment(sam_seed, echo) << '\n';
        os << "row,col,kind,values\n";
        for (const auto& c : summary.categorical) {
          os << c.row << ',' << data.schema.var(c.col).name << ",cat";
          for (Eigen::Index k = 0; k < c.probs.size(); ++k)
            os << ',' << format_double(c.probs(k));
          os << '\n';
        }
        for (const auto& c : summary.ordered)
          os << c.row << ',' << data.schema.var(c.col).name << ",interval,"
             << format_double(c.lo) << ',' << format_double(c.hi) << '\n';
      }
      std::cerr << "sample: " << sam_m << " completions written to " << sam_out << "_s*.csv\n";
      return 0;
    }

    if (*gen_cmd) {
      const auto syn = generate_synthetic_mixed(gen_n, gen_ncont, gen_nord, gen_pcat, gen_k,
                                                gen_seed, gen_params);
      save_dataset(syn.dataset, gen_data, common.missing, header_comment(gen_seed, echo));
      save_schema(syn.dataset.schema, gen_schema);
      if (!gen_model.empty()) save_model(syn.model, gen_model);
      return 0;
    }

    if (*mask_cmd) {
      const auto data = load(common);
      mask_spec.mechanism = mechanism_from_string(mech_name);
      const auto result = mask(data, mask_spec);
      save_dataset(result.masked, mask_out, common.missing,
                   header_comment(mask_spec.seed, echo));
      if (!mask_cells_out.empty())
        save_mask(result.cells, data.schema, mask_cells_out,
                  header_comment(mask_spec.seed, echo));
      std::cerr << "mask: " << result.cells.size() << " cells hidden\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto schema = load_schema(common.schema_path);
      const auto truth = load_dataset(truth_path, schema, common.missing);
      const auto imputed = load_dataset(imputed_path, schema, common.missing);
      const auto cells = load_mask(mask_path, schema);
      Metrics metrics;
      if (!baseline_path.empty()) {
        const auto baseline = load_dataset(baseline_path, schema, common.missing);
        metrics = evaluate(truth, imputed, cells, &baseline);
      } else {
        metrics = evaluate(truth, imputed, cells);
      }
      std::ofstream os(metrics_out);
      if (!os) throw std::runtime_error("cannot write " + metrics_out);
      write_metrics_header(os, header_comment(0, echo));
      write_metrics_rows(os, truth.rows(), -1, -1, "-", 0.0, 0, "egc", metrics);
      print_metrics_table(std::cerr, metrics);
      return 0;
    }

    if (*bench_cmd) {
      std::ofstream os(bench_out);
      if (!os) throw std::runtime_error("cannot write " + bench_out);
      write_metrics_header(os, header_comment(bench_seed, echo));
      for (const int pcat : bench_pcat)
        for (const int k : bench_k)
          for (const auto& mech_str : bench_mechs)
            for (const double alpha : bench_alphas)
              for (int rep = 0; rep < bench_seeds; ++rep) {
                const std::uint64_t cell_seed = egc::Rng::derive(
                    bench_seed, static_cast<std::uint64_t>(
                                    ((pcat * 31 + k) * 7 + rep) * 1009 +
                                    static_cast<int>(alpha * 100) * 13 +
                                    static_cast<int>(mech_str[2])));
                const auto syn =
                    generate_synthetic(bench_n, pcat, k, cell_seed, bench_params);
                MaskSpec spec{mechanism_from_string(mech_str), alpha, cell_seed + 1};
                const auto masked = mask(syn.dataset, spec);
                FitConfig cfg;
                cfg.seed = cell_seed + 2;
                cfg.threads = common.threads;
                const auto model = fit(masked.masked, cfg);
                const auto imputed = single_impute(masked.masked, model);
                const auto baseline = baseline_impute(masked.masked);
                const auto m_egc = evaluate(syn.dataset, imputed, masked.cells, &baseline);
                const auto m_base = evaluate(syn.dataset, baseline, masked.cells, &baseline);
                write_metrics_rows(os, bench_n, pcat, k, mech_str, alpha, cell_seed, "egc",
                                   m_egc);
                write_metrics_rows(os, bench_n, pcat, k, mech_str, alpha, cell_seed, "baseline",
                                   m_base);
                std::cerr << "bench: pcat=" << pcat << " K=" << k << " " << mech_str
                          << " alpha=" << alpha << " rep=" << rep
                          << " me=" << m_egc.me_cat << " mae_cont=" << m_egc.mae_cont
                          << " mae_ord=" << m_egc.mae_ord << "\n";
              }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
