#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lvae/classifier.hpp"
#include "lvae/datagen.hpp"
#include "lvae/metrics.hpp"
#include "lvae/predictive.hpp"
#include "lvae/verify.hpp"

namespace py = pybind11;
using namespace lvae;

namespace {

CovariateSchema make_schema(const std::vector<std::pair<std::string, std::string>>& columns,
                            const std::string& id_column) {
  CovariateSchema schema;
  for (const auto& [name, kind] : columns) {
    CovariateKind k;
    if (kind == "continuous") k = CovariateKind::Continuous;
    else if (kind == "categorical") k = CovariateKind::Categorical;
    else if (kind == "binary") k = CovariateKind::Binary;
    else throw std::invalid_argument("unknown covariate kind: " + kind);
    schema.entries.push_back({name, k});
    if (name == id_column) schema.id_index = schema.size() - 1;
  }
  schema.validate();
  return schema;
}

}  // namespace

PYBIND11_MODULE(_lvae, m) {
  m.doc() = "longitudinal VAE core (additive GP latent priors)";
  m.attr("__version__") = "0.1.0";

  py::class_<CovariateSchema>(m, "Schema")
      .def(py::init(&make_schema), py::arg("columns"), py::arg("id_column"))
      .def("index_of", &CovariateSchema::index_of)
      .def_property_readonly("names", [](const CovariateSchema& s) {
        std::vector<std::string> out;
        for (const auto& e : s.entries) out.push_back(e.name);
        return out;
      });

  py::class_<CovariateMatrix>(m, "Covariates")
      .def(py::init([](const CovariateSchema& schema, const MatrixXd& values) {
             return CovariateMatrix::build(schema, values);
           }),
           py::arg("schema"), py::arg("values"))
      .def_property_readonly("values", [](const CovariateMatrix& x) { return x.values; })
      .def_property_readonly("instances", [](const CovariateMatrix& x) { return x.instances(); })
      .def("select_instances", &CovariateMatrix::select_instances)
      .def("__len__", [](const CovariateMatrix& x) { return x.rows(); });

  py::class_<AdditivePrior>(m, "Prior")
      .def_property_readonly("latent_dim", [](const AdditivePrior& p) { return p.latent_dim; })
      .def("describe", &describe_prior)
      .def("params",
           [](const AdditivePrior& p) {
             VectorXd out;
             p.get_params(out);
             return out;
           })
      .def("set_params", [](AdditivePrior& p, const VectorXd& v) { p.set_params(v); });

  m.def("parse_prior", &parse_prior, py::arg("descriptor"), py::arg("schema"),
        py::arg("latent_dim") = 1);
  m.def("initialize_lengthscales", &initialize_lengthscales);
  m.def("covariance", &assemble_sigma, py::arg("prior"), py::arg("dim"), py::arg("x"),
        "full prior covariance of one latent dimension, noise included");
  m.def("shared_covariance", &gram_a, py::arg("prior"), py::arg("dim"), py::arg("a"),
        py::arg("b"), "non-instance kernel part between two row sets");
  m.def("shared_space", &shared_space_copy, py::arg("x"), py::arg("id_base") = 1000.0,
        "copy with fresh ids so only the shared kernel part applies");

  // divergence terms, one latent dimension at a time
  m.def(
      "kl_exact",
      [](const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int dim,
         const CovariateMatrix& x) { return kl_exact(mu, w, prior, dim, x); },
      py::arg("mu"), py::arg("w"), py::arg("prior"), py::arg("dim"), py::arg("x"));
  m.def("bound_collapsed", &bound_D1, py::arg("mu"), py::arg("w"), py::arg("prior"),
        py::arg("dim"), py::arg("x"), py::arg("inducing"),
        "collapsed sparse upper bound, inducing rows in the full covariate space");
  m.def(
      "bound_structured",
      [](const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int dim,
         const CovariateMatrix& x, const CovariateMatrix& s, bool dense) {
        return dense ? bound_D2_dense(mu, w, prior, dim, x, s)
                     : bound_D2(mu, w, prior, dim, x, s);
      },
      py::arg("mu"), py::arg("w"), py::arg("prior"), py::arg("dim"), py::arg("x"),
      py::arg("inducing"), py::arg("dense") = false,
      "structured sparse upper bound; instance blocks stay exact");
  m.def(
      "bound_stochastic",
      [](const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int dim,
         const CovariateMatrix& x, const CovariateMatrix& s, const VectorXd& ind_mean,
         const MatrixXd& ind_cov) {
        return svi_D4_full(mu, w, prior, dim, x, s, ind_mean, ind_cov);
      },
      py::arg("mu"), py::arg("w"), py::arg("prior"), py::arg("dim"), py::arg("x"),
      py::arg("inducing"), py::arg("ind_mean"), py::arg("ind_cov"),
      "uncollapsed bound with an explicit inducing posterior");
  m.def(
      "stochastic_step",
      [](const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int dim,
         const CovariateMatrix& x, const CovariateMatrix& s, VectorXd ind_mean,
         MatrixXd ind_cov, double step) {
        VectorXd d_m;
        MatrixXd d_h;
        svi_D4_full(mu, w, prior, dim, x, s, ind_mean, ind_cov, nullptr, &d_m, &d_h);
        natural_gradient_step(ind_mean, ind_cov, d_m, d_h, step);
        return py::make_tuple(ind_mean, ind_cov);
      },
      py::arg("mu"), py::arg("w"), py::arg("prior"), py::arg("dim"), py::arg("x"),
      py::arg("inducing"), py::arg("ind_mean"), py::arg("ind_cov"), py::arg("step") = 1.0,
      "one natural-gradient update of the inducing posterior");

  // latent predictives
  m.def(
      "predict_exact",
      [](const AdditivePrior& prior, int dim, const CovariateMatrix& x, const VectorXd& mu,
         const VectorXd& w, const CovariateMatrix& query) {
        const LatentPredictive p = predict_latent_exact(prior, dim, x, mu, w, query);
        return py::make_tuple(p.mean, p.var);
      },
      py::arg("prior"), py::arg("dim"), py::arg("x"), py::arg("mu"), py::arg("w"),
      py::arg("query"));
  m.def(
      "predict_sparse",
      [](const AdditivePrior& prior, int dim, const CovariateMatrix& x, const VectorXd& mu,
         const VectorXd& w, const CovariateMatrix& s, const CovariateMatrix& query) {
        const LatentPredictive p = predict_latent_sparse(prior, dim, x, mu, w, s, query);
        return py::make_tuple(p.mean, p.var);
      },
      py::arg("prior"), py::arg("dim"), py::arg("x"), py::arg("mu"), py::arg("w"),
      py::arg("inducing"), py::arg("query"));

  // synthetic benchmark
  m.def(
      "generate",
      [](const std::string& out_dir, int instances, int val_instances, int predict_instances,
         int timepoints, int predict_observed, int obs_dim, int latent_dim, double disease_frac,
         double missing_frac, double noise_sd, double disease_scale, std::uint64_t seed) {
        GenConfig cfg;
        cfg.instances = instances;
        cfg.val_instances = val_instances;
        cfg.predict_instances = predict_instances;
        cfg.timepoints = timepoints;
        cfg.predict_observed = predict_observed;
        cfg.obs_dim = obs_dim;
        cfg.latent_dim = latent_dim;
        cfg.disease_frac = disease_frac;
        cfg.missing_frac = missing_frac;
        cfg.noise_sd = noise_sd;
        cfg.disease_scale = disease_scale;
        cfg.seed = seed;
        write_benchmark(out_dir, generate_benchmark(cfg));
      },
      py::arg("out_dir"), py::arg("instances") = 60, py::arg("val_instances") = 12,
      py::arg("predict_instances") = 10, py::arg("timepoints") = 20,
      py::arg("predict_observed") = 5, py::arg("obs_dim") = 32, py::arg("latent_dim") = 4,
      py::arg("disease_frac") = 0.5, py::arg("missing_frac") = 0.25, py::arg("noise_sd") = 0.2,
      py::arg("disease_scale") = 1.5, py::arg("seed") = 0,
      "write a synthetic longitudinal benchmark (train/val/test splits) to a directory");
}
