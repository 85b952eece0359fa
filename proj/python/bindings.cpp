#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "adamix/data_synth.hpp"
#include "adamix/experiment.hpp"
#include "adamix/metrics.hpp"
#include "adamix/mixers.hpp"
#include "adamix/selfpaced.hpp"

namespace py = pybind11;
using namespace adamix;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename Map>
Map to_plane(const Array<typename Map::value_type>& a, const char* what) {
  if (a.ndim() != 2) throw PreconditionError(std::string(what) + ": expected a 2-D array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  Map m(1, h, w);
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

template <typename Map>
Array<typename Map::value_type> to_array(const Map& m) {
  Array<typename Map::value_type> a({m.height(), m.width()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

py::dict metric_dict(const MetricReport& r) {
  py::dict d;
  d["dsc"] = r.dsc;
  d["jaccard"] = r.jaccard;
  d["hd95"] = r.hd95 ? py::cast(*r.hd95) : py::none();
  d["asd"] = r.asd ? py::cast(*r.asd) : py::none();
  return d;
}

py::dict summary_dict(const DatasetMetrics& m) {
  py::dict d;
  d["dsc"] = m.dsc;
  d["jaccard"] = m.jaccard;
  d["hd95"] = m.hd95 ? py::cast(*m.hd95) : py::none();
  d["asd"] = m.asd ? py::cast(*m.asd) : py::none();
  d["class_dsc"] = m.class_dsc;
  return d;
}

py::tuple mix(const std::string& strategy, const Array<float>& oi, const Array<std::uint8_t>& ol,
              const Array<float>& oc, const Array<float>& ai, const Array<std::uint8_t>& al, const Array<float>& ac,
              int n, int patch_size, double proxy_loss, double lambda, std::uint64_t seed) {
  const MixSource o{to_plane<Image>(oi, "image"), to_plane<LabelMap>(ol, "label"),
                    to_plane<ConfidenceMap>(oc, "confidence")};
  const MixSource a{to_plane<Image>(ai, "image"), to_plane<LabelMap>(al, "label"),
                    to_plane<ConfidenceMap>(ac, "confidence")};
  const PatchGrid grid(o.image.height(), o.image.width(), patch_size);
  MixedSample m;
  switch (parse_mix_strategy(strategy)) {
    case MixStrategy::CutMix: {
      std::mt19937_64 rng(seed);
      m = cutmix(o, a, n, grid, rng);
      break;
    }
    case MixStrategy::UMix:
      m = umix(o, a, n, grid);
      break;
    case MixStrategy::IUMix:
      m = iumix(o, a, n, grid);
      break;
    case MixStrategy::AdaMix:
      m = adamix_with_state(o, a, self_paced_state(proxy_loss, lambda, n), grid);
      break;
  }
  return py::make_tuple(to_array(m.image), to_array(m.label), to_array(m.confidence), to_json(m.plan).dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("age_lambda", [](std::int64_t t, std::int64_t max_iteration) { return age_lambda(t, AgeSchedule{max_iteration}); },
        py::arg("t"), py::arg("max_iteration"));
  m.def("solve_mask", &solve_mask, py::arg("proxy_loss"), py::arg("lam"));
  m.def("solve_weight", &solve_weight, py::arg("proxy_loss"), py::arg("lam"));
  m.def("patch_count", &patch_count, py::arg("weight"), py::arg("max_patches"));
  m.def(
      "self_paced_state",
      [](double proxy_loss, double lambda, int max_patches) {
        const SelfPacedState s = self_paced_state(proxy_loss, lambda, max_patches);
        py::dict d;
        d["lambda"] = s.lambda;
        d["proxy_loss"] = s.proxy_loss;
        d["mask"] = s.mask;
        d["weight"] = s.weight;
        d["n"] = s.n;
        d["rule"] = std::string(to_string(mix_rule(s.mask)));
        return d;
      },
      py::arg("proxy_loss"), py::arg("lam"), py::arg("max_patches"));

  m.def(
      "generate_sample",
      [](int index, std::uint64_t seed, int image_size) {
        DatasetSpec spec;
        spec.seed = seed;
        spec.image_size = image_size;
        const SampleRecord r = generate_sample(spec, index);
        return py::make_tuple(to_array(r.image), to_array(r.label), std::string(to_string(r.split)));
      },
      py::arg("index"), py::arg("seed") = 0, py::arg("image_size") = 64);

  m.def(
      "overlap",
      [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& gt) {
        const BinaryMask p = to_plane<BinaryMask>(pred, "pred"), g = to_plane<BinaryMask>(gt, "gt");
        return py::make_tuple(dice(p, g).value, jaccard(p, g).value);
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "surface_distances",
      [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& gt) -> py::object {
        const SurfaceDistances s = surface_distances(to_plane<BinaryMask>(pred, "pred"), to_plane<BinaryMask>(gt, "gt"));
        if (!s.defined) return py::none();
        return py::make_tuple(s.hd95, s.asd);
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "evaluate_sample",
      [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& gt, int n_classes) {
        return metric_dict(evaluate_sample(to_plane<LabelMap>(pred, "pred"), to_plane<LabelMap>(gt, "gt"), n_classes));
      },
      py::arg("pred"), py::arg("gt"), py::arg("n_classes") = 3);

  m.def("mix", &mix, py::arg("strategy"), py::arg("original_image"), py::arg("original_label"),
        py::arg("original_confidence"), py::arg("auxiliary_image"), py::arg("auxiliary_label"),
        py::arg("auxiliary_confidence"), py::arg("n"), py::arg("patch_size"), py::arg("proxy_loss") = 0.0,
        py::arg("lam") = 1.0, py::arg("seed") = 0);

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& text) {
    return to_json(run_config_from_json(nlohmann::json::parse(text))).dump();
  });
  m.def(
      "train",
      [](const std::string& config, const std::string& out_dir) {
        const RunConfig cfg = run_config_from_json(nlohmann::json::parse(config));
        RunArtifacts a;
        {
          py::gil_scoped_release release;
          a = run_training(cfg, out_dir);
        }
        return summary_dict(a.test.summary);
      },
      py::arg("config"), py::arg("out_dir"));
  m.def(
      "evaluate_run",
      [](const std::string& run_dir, const std::string& split) {
        Evaluation ev;
        {
          py::gil_scoped_release release;
          ev = run_evaluation(run_dir, parse_split(split));
        }
        return summary_dict(ev.summary);
      },
      py::arg("run_dir"), py::arg("split") = "test");
}
