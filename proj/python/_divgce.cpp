#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "divgce/check.hpp"
#include "divgce/checkpoint.hpp"
#include "divgce/divblock.hpp"
#include "divgce/gce.hpp"
#include "divgce/harness.hpp"

namespace py = pybind11;
using namespace divgce;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-d score vector");
  return {a.data(), a.data() + a.size()};
}

py::dict split_dict(const loss::NegativeSplit& s) {
  py::dict d;
  d["label"] = s.label;
  d["hard"] = s.hard;
  d["easy"] = s.easy;
  d["threshold"] = s.threshold;
  return d;
}

db::DiversificationConfig db_cfg(double p_peak, double p_patch, std::size_t patch_size, double alpha,
                                 bool train) {
  db::DiversificationConfig c{p_peak, p_patch, patch_size, alpha, train ? db::Mode::train : db::Mode::eval};
  c.validate();
  return c;
}

RngStream mask_stream(std::uint64_t seed, std::uint32_t epoch, std::uint32_t batch) {
  return RngStream(seed, RngDomain::mask).substream(epoch, batch);
}

RunConfig run_config(const py::dict& kw) {
  RunConfig rc;
  for (auto [k, v] : kw) {
    std::string value = py::str(v);
    if (py::isinstance<py::bool_>(v)) value = v.cast<bool>() ? "true" : "false";
    if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      value.clear();
      for (auto item : v) value += (value.empty() ? "" : ",") + std::string(py::str(item));
    }
    rc.set(k.cast<std::string>(), value);
  }
  rc.validate();
  return rc;
}

py::list rows_list(const std::vector<harness::MetricsRow>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["split"] = r.split;
    d["loss"] = r.loss;
    d["accuracy"] = r.accuracy;
    d["seconds"] = r.seconds;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_divgce, m) {
  m.doc() = "Diversification block and gradient-boosting cross entropy";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<synth::GeometryError>(m, "GeometryError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("philox4x32", &philox4x32, py::arg("counter"), py::arg("key"));

  // losses
  m.def("top_k_negatives", [](const Array& s, std::size_t l, std::size_t k) {
    return split_dict(loss::top_k_negatives(to_vector(s), l, k));
  }, py::arg("scores"), py::arg("label"), py::arg("k"));
  m.def("ce_loss", [](const Array& s, std::size_t l) { return loss::ce_loss(to_vector(s), l); },
        py::arg("scores"), py::arg("label"));
  m.def("ce_gradient", [](const Array& s, std::size_t l) { return loss::ce_gradient(to_vector(s), l); },
        py::arg("scores"), py::arg("label"));
  m.def("gce_loss", [](const Array& s, std::size_t l, std::size_t k) {
    return loss::gce_loss(to_vector(s), l, k);
  }, py::arg("scores"), py::arg("label"), py::arg("k"));
  m.def("gce_gradient", [](const Array& s, std::size_t l, std::size_t k) {
    return loss::gce_gradient(to_vector(s), l, k);
  }, py::arg("scores"), py::arg("label"), py::arg("k"));
  m.def("verify_boost", [](const Array& s, std::size_t l, std::size_t k) {
    auto r = loss::verify_boost(to_vector(s), l, k);
    py::dict d;
    d["split"] = split_dict(r.split);
    d["classes"] = r.classes;
    d["margins"] = r.margins;
    d["violations"] = r.violations;
    d["degenerate"] = r.degenerate;
    d["ok"] = r.ok();
    return d;
  }, py::arg("scores"), py::arg("label"), py::arg("k"));
  m.def("batched_loss", [](const Array& s, const std::vector<std::size_t>& labels, std::size_t k,
                           const std::string& kind) {
    auto r = loss::batched_loss(to_tensor(s), labels, k, loss::parse_loss_kind(kind));
    return py::make_tuple(r.mean, r.per_sample, to_array(r.grad));
  }, py::arg("scores"), py::arg("labels"), py::arg("k"), py::arg("kind") = "gce");

  // diversification block
  m.def("peak_maps", [](const Array& maps) { return to_array(db::peak_maps(to_tensor(maps))); },
        py::arg("maps"));
  m.def("suppression_mask", [](const Array& maps, double p_peak, double p_patch, std::size_t g,
                               std::uint64_t seed, std::uint32_t epoch, std::uint32_t batch) {
    return to_array(db::suppression_mask(to_tensor(maps), db_cfg(p_peak, p_patch, g, 0.1, true),
                                         mask_stream(seed, epoch, batch)));
  }, py::arg("maps"), py::arg("p_peak") = 0.5, py::arg("p_patch") = 0.5, py::arg("patch_size") = 2,
     py::arg("seed") = 0, py::arg("epoch") = 0, py::arg("batch") = 0);
  m.def("apply_suppression", [](const Array& maps, const Array& mask, double alpha) {
    return to_array(db::apply_suppression(to_tensor(maps), to_tensor(mask), alpha));
  }, py::arg("maps"), py::arg("mask"), py::arg("alpha"));
  m.def("global_avg_pool", [](const Array& maps) { return to_array(db::global_avg_pool(to_tensor(maps))); },
        py::arg("maps"));
  m.def("db_forward", [](const Array& maps, bool train, double p_peak, double p_patch, std::size_t g,
                         double alpha, std::uint64_t seed, std::uint32_t epoch, std::uint32_t batch) {
    db::MaskTrace trace;
    Tensor s = db::db_forward(to_tensor(maps), db_cfg(p_peak, p_patch, g, alpha, train),
                              mask_stream(seed, epoch, batch), &trace);
    py::object mask = py::none();
    if (train) mask = to_array(trace.combined);
    return py::make_tuple(to_array(s), mask);
  }, py::arg("maps"), py::arg("train") = true, py::arg("p_peak") = 0.5, py::arg("p_patch") = 0.5,
     py::arg("patch_size") = 2, py::arg("alpha") = 0.1, py::arg("seed") = 0, py::arg("epoch") = 0,
     py::arg("batch") = 0);

  // tensors
  m.def("conv2d", [](const Array& in, const Array& k, std::size_t stride, std::size_t pad) {
    return to_array(ad::conv2d(ad::constant(to_tensor(in)), ad::constant(to_tensor(k)), stride, pad).value());
  }, py::arg("input"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = 0);
  m.def("load_checkpoint", [](const std::filesystem::path& p) {
    py::dict d;
    for (const auto& nt : load_checkpoint(p)) d[py::str(nt.name)] = to_array(nt.tensor);
    return d;
  }, py::arg("path"));
  m.def("save_checkpoint", [](const std::filesystem::path& p, const py::dict& tensors) {
    std::vector<NamedTensor> out;
    for (auto [k, v] : tensors) out.push_back({k.cast<std::string>(), to_tensor(v.cast<Array>())});
    save_checkpoint(p, out);
  }, py::arg("path"), py::arg("tensors"));

  // data and training
  m.def("generate_dataset", [](const std::filesystem::path& out, const py::dict& kw) {
    synth::SynthConfig sc;
    KeyValues kv;
    for (auto [k, v] : kw) kv.emplace_back(k.cast<std::string>(), std::string(py::str(v)));
    apply_synth(sc, kv);
    auto data = synth::generate(sc);
    harness::save_dataset_dir(out, data, sc);
    return py::make_tuple(data.train.size(), data.test.size());
  }, py::arg("out"), py::arg("config") = py::dict());
  m.def("load_dataset", [](const std::filesystem::path& p) {
    auto ds = synth::load_dataset(p);
    return py::make_tuple(to_array(ds.images), ds.labels);
  }, py::arg("path"));
  m.def("train", [](const py::dict& kw) {
    RunConfig rc = run_config(kw);
    harness::TrainResult r;
    {
      py::gil_scoped_release release;
      r = harness::train(rc);
    }
    return rows_list(r.rows);
  }, py::arg("config"), "Trains with RunConfig keys given as a dict; returns the metrics rows.");
  m.def("eval_checkpoint", [](const std::filesystem::path& ckpt, const std::filesystem::path& data,
                              const std::filesystem::path& confusion) {
    auto r = harness::eval_checkpoint(ckpt, data, confusion);
    py::dict d;
    d["loss"] = r.loss;
    d["accuracy"] = r.accuracy;
    d["confusion"] = r.confusion;
    return d;
  }, py::arg("checkpoint"), py::arg("dataset"), py::arg("confusion_csv"));
  m.def("run_oracle_suite", [](std::uint64_t seed) {
    py::list out;
    for (const auto& r : harness::run_oracle_suite(seed)) {
      py::dict d;
      d["operation"] = r.operation;
      d["max_abs_err"] = r.max_abs_err;
      d["max_rel_err"] = r.max_rel_err;
      d["worst_input"] = r.worst_input;
      d["pass"] = r.pass;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 0);
}
