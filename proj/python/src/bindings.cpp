#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdio>
#include <sstream>

#include "scalelab/config.hpp"

namespace py = pybind11;
using namespace scalelab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw Error("expected a 2-D array");
  return Matrix(a.shape(0), a.shape(1), to_vector(a));
}

Array matrix_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

MixtureParams mixture(std::size_t n, const Array& alpha, const Array& mu, const Array& sigma, const Array& rho) {
  MixtureParams p;
  p.n = n;
  p.K = alpha.size();
  p.alpha = to_vector(alpha);
  p.mu = to_vector(mu);
  p.sigma = to_vector(sigma);
  p.rho = to_vector(rho);
  p.validate();
  return p;
}

py::tuple runlog_tuple(const RunLog& log) {
  py::list records;
  for (const auto& r : log.records) records.append(py::make_tuple(r.epoch, r.train_loss, r.val_loss, r.elapsed_s));
  return py::make_tuple(records, format_status(log.status));
}

RunLog runlog_from(const std::vector<std::tuple<std::size_t, double, double, double>>& records,
                   const std::string& status) {
  std::string text = "epoch,train_loss,val_loss,elapsed_s\n";
  char buf[160];
  for (const auto& [e, tr, va, el] : records) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e, tr, va, el);
    text += buf;
  }
  text += "# " + status + "\n";
  std::istringstream in(text);
  return read_runlog_csv(in);
}

}  // namespace

PYBIND11_MODULE(_scalelab, m) {
  m.doc() = "Deterministic data-parallel training and scaling-efficiency analysis.";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<NotPositiveDefinite>(m, "NotPositiveDefinite", error.ptr());
  py::register_exception<Diverged>(m, "Diverged", error.ptr());

  m.def("tree_sum", [](const Array& v) { return tree_sum(to_vector(v)); }, py::arg("values"));
  m.def("cholesky", [](const Array& s) { return matrix_array(cholesky(to_matrix(s))); }, py::arg("s"));
  m.def(
      "gaussian_pdf",
      [](const Array& x, const Array& mu, const Array& s) { return gaussian_pdf(to_vector(x), to_vector(mu), to_matrix(s)); },
      py::arg("x"), py::arg("mu"), py::arg("cov"));
  m.def(
      "mixture_density",
      [](const Array& x, std::size_t n, const Array& alpha, const Array& mu, const Array& sigma, const Array& rho) {
        return mixture_density(to_vector(x), mixture(n, alpha, mu, sigma, rho));
      },
      py::arg("x"), py::arg("n"), py::arg("alpha"), py::arg("mu"), py::arg("sigma"), py::arg("rho"));
  m.def(
      "render_grid",
      [](std::size_t n, std::size_t side, const Array& alpha, const Array& mu, const Array& sigma, const Array& rho) {
        GridSpec g;
        g.n = n;
        g.side = side;
        return to_array(render_grid(mixture(n, alpha, mu, sigma, rho), g));
      },
      py::arg("n"), py::arg("side"), py::arg("alpha"), py::arg("mu"), py::arg("sigma"), py::arg("rho"));
  m.def("param_count", &param_count, py::arg("n"), py::arg("K"));
  m.def(
      "msle",
      [](const Array& pred, const Array& target) {
        if (pred.size() != target.size()) throw Error("msle: size mismatch");
        const std::vector<std::size_t> shape{static_cast<std::size_t>(pred.size())};
        return msle(Tensor(shape, to_vector(pred)), Tensor(shape, to_vector(target)));
      },
      py::arg("pred"), py::arg("target"));

  m.def(
      "lr_at",
      [](const std::string& schedule, double base_lr, unsigned k, std::size_t steps_per_epoch, std::size_t step,
         double warmup_epochs) {
        Schedule s;
        s.mode = parse_schedule_mode(schedule);
        s.base_lr = base_lr;
        s.k = k;
        s.steps_per_epoch = steps_per_epoch;
        s.warmup_epochs = warmup_epochs;
        s.validate();
        return lr_at(s, step);
      },
      py::arg("schedule"), py::arg("base_lr"), py::arg("k"), py::arg("steps_per_epoch"), py::arg("step"),
      py::arg("warmup_epochs") = 5.0);

  m.def("efficiency", &efficiency, py::arg("t1"), py::arg("tn"), py::arg("n"));
  m.def(
      "ci95",
      [](const std::vector<double>& samples) {
        const auto c = confidence_interval_95(samples);
        return py::make_tuple(c.mean, c.halfwidth);
      },
      py::arg("samples"));
  m.def("student_t975", &student_t975, py::arg("df"));
  m.def(
      "predict_speedup", [](double t_s, double t_p, double c, double n) { return predict_speedup({t_s, t_p, c}, n); },
      py::arg("t_s"), py::arg("t_p"), py::arg("c"), py::arg("n"));
  m.def(
      "fit_speedup",
      [](const std::vector<std::pair<double, double>>& measured) {
        const auto f = fit_speedup(measured);
        return py::make_tuple(f.model.t_s, f.model.t_p, f.model.c, f.residual_norm);
      },
      py::arg("measured"));

  m.def(
      "generate",
      [](const std::string& options_json) {
        GeneratorOptions g;
        merge_json(nlohmann::json::parse(options_json), g);
        const Dataset ds = generate(g);
        std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(ds.size())};
        for (std::size_t a = 0; a < ds.n; ++a) shape.push_back(static_cast<py::ssize_t>(ds.side));
        Array out(shape);
        double* dst = out.mutable_data();
        for (const auto& x : ds.examples) dst = std::copy(x.data(), x.data() + x.size(), dst);
        return out;
      },
      py::arg("options_json"));

  m.def(
      "train",
      [](const std::string& config_json, const std::string& dataset_json, std::size_t validation_size,
         const std::function<void(std::size_t, double, double, double)>& on_epoch) {
        TrainConfig c;
        GeneratorOptions g;
        g.grid.n = c.model.n;
        g.grid.side = c.model.side;
        merge_json(nlohmann::json::parse(config_json), c);
        merge_json(nlohmann::json::parse(dataset_json), g);
        c.validate();
        const Split data = split(generate(g), validation_size, g.seed);
        EpochCallback cb;
        if (on_epoch)
          cb = [&](const EpochRecord& r) {
            py::gil_scoped_acquire hold;
            on_epoch(r.epoch, r.train_loss, r.val_loss, r.elapsed_s);
          };
        RunLog log;
        {
          py::gil_scoped_release release;
          log = train(c, data.train, data.validation, cb);
        }
        return runlog_tuple(log);
      },
      py::arg("config_json"), py::arg("dataset_json"), py::arg("validation_size"), py::arg("on_epoch") = nullptr);

  m.def(
      "time_to_loss",
      [](const std::vector<std::tuple<std::size_t, double, double, double>>& records, const std::string& status,
         double target) {
        const auto t = time_to_loss(runlog_from(records, status), target);
        py::object seconds = t.outcome == Outcome::Reached ? py::object(py::float_(t.seconds)) : py::none();
        return py::make_tuple(std::string(to_string(t.outcome)), seconds, t.epoch);
      },
      py::arg("records"), py::arg("status"), py::arg("target"));

  m.def(
      "default_config", [] { return to_json(TrainConfig{}).dump(); },
      "Default training configuration as a JSON string.");
}
