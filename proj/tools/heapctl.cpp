// SPDX-License-Identifier: Apache-2.0
// heapctl: create, inspect, validate, collect, crash-test and benchmark heaps.
#include <algorithm>
#include <cstdio>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pjh/errors.hpp"
#include "pjh/heap.hpp"
#include "pjh/runtime.hpp"
#include "pjh/storage.hpp"
#include "pjh/validate.hpp"
#include "pjh/workloads.hpp"

namespace {

using nlohmann::ordered_json;

/// Collects key=value pairs; prints them one per line, or as one JSON
/// object in machine mode.
class Report {
 public:
  explicit Report(bool machine) : machine_(machine) {}

  template <typename T>
  Report& put(const std::string& key, const T& value) {
    fields_[key] = value;
    return *this;
  }
  void row(ordered_json r) { rows_.push_back(std::move(r)); }

  void print() const {
    if (machine_) {
      ordered_json out = fields_;
      if (!rows_.empty()) out["rows"] = rows_;
      std::cout << out.dump() << "\n";
      return;
    }
    for (const auto& r : rows_) {
      std::string line;
      for (const auto& [k, v] : r.items()) {
        line += (line.empty() ? "" : " ") + k + "=" + text(v);
      }
      std::cout << line << "\n";
    }
    for (const auto& [k, v] : fields_.items()) std::cout << k << "=" << text(v) << "\n";
  }

 private:
  static std::string text(const ordered_json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
      return buf;
    }
    return v.dump();
  }

  bool machine_;
  ordered_json fields_ = ordered_json::object();
  std::vector<ordered_json> rows_;
};

pjh::SafetyLevel parse_safety(const std::string& s) {
  return s == "zero" ? pjh::SafetyLevel::Zeroing : pjh::SafetyLevel::UserGuaranteed;
}

int cmd_create(const std::string& dir, const std::string& name, std::uint64_t size, Report& out) {
  pjh::Runtime rt(std::make_shared<pjh::DirectoryStorage>(dir));
  pjh::Heap& heap = rt.create_heap(name, size);
  out.put("name", name).put("size", heap.size()).put("address_hint", heap.metadata().address_hint)
      .put("data_start", heap.data_start()).put("regions", heap.metadata().region_count)
      .put("result", "pass");
  return 0;
}

int cmd_info(const std::string& dir, const std::string& name, pjh::SafetyLevel safety, Report& out) {
  pjh::Runtime rt(std::make_shared<pjh::DirectoryStorage>(dir));
  pjh::LoadOptions lo;
  lo.safety = safety;
  pjh::Heap& heap = rt.load_heap(name, lo);
  const auto& m = heap.metadata();
  out.put("name", name).put("version", m.version).put("size", m.heap_size)
      .put("address_hint", m.address_hint).put("top", m.top).put("global_timestamp", m.global_timestamp)
      .put("gc_in_progress", m.gc_in_progress).put("data_start", m.data_heap_location)
      .put("data_end", m.data_heap_end()).put("regions", m.region_count)
      .put("klass_segment", m.klass_segment_location).put("klass_top", heap.klass_top())
      .put("name_table", m.name_table_location).put("undo_log", m.undo_log_location)
      .put("undo_log_size", m.undo_log_size).put("scratch", m.scratch_location)
      .put("mark_bitmap", m.mark_bitmap_location).put("region_bitmap", m.region_bitmap_location)
      .put("klasses", heap.klasses().size()).put("roots", heap.roots().size())
      .put("load_gc_recovered", heap.load_report().gc_recovered)
      .put("load_gap_repaired", heap.load_report().gap_repaired)
      .put("load_remapped", heap.load_report().remapped)
      .put("load_nullified", heap.load_report().nullified);
  return 0;
}

int cmd_roots(const std::string& dir, const std::string& name, Report& out) {
  pjh::Runtime rt(std::make_shared<pjh::DirectoryStorage>(dir));
  pjh::Heap& heap = rt.load_heap(name);
  for (const auto& [root, ref] : heap.roots()) {
    ordered_json r;
    r["root"] = root;
    r["address"] = ref.address;
    r["type"] = ref.is_null() ? std::string("null") : heap.descriptor_of(ref).name();
    out.row(r);
  }
  out.put("roots", heap.roots().size());
  return 0;
}

int cmd_validate(const std::string& dir, const std::string& name, Report& out) {
  pjh::Runtime rt(std::make_shared<pjh::DirectoryStorage>(dir));
  pjh::Heap& heap = rt.load_heap(name);
  const auto r = pjh::validate(heap);
  for (const auto& e : r.errors) {
    ordered_json row;
    row["error"] = e;
    out.row(row);
  }
  out.put("objects", r.objects).put("fillers", r.fillers).put("object_bytes", r.object_bytes)
      .put("klasses", r.klasses).put("roots", r.roots).put("references", r.references)
      .put("foreign_references", r.foreign_references).put("undo_records", r.undo_records)
      .put("errors", r.errors.size()).put("result", r.ok() ? "pass" : "fail");
  return r.ok() ? 0 : 1;
}

int cmd_gc(const std::string& dir, const std::string& name, Report& out) {
  pjh::Runtime rt(std::make_shared<pjh::DirectoryStorage>(dir));
  pjh::Heap& heap = rt.load_heap(name);
  const auto s = heap.collect();
  out.put("live_objects", s.live_objects).put("live_bytes", s.live_bytes)
      .put("reclaimed_bytes", s.reclaimed_bytes).put("regions", s.regions)
      .put("fences_issued", s.fences_issued).put("pause_ms", static_cast<double>(s.pause_ns) / 1e6)
      .put("top", heap.top());
  rt.close_heap(name);
  return 0;
}

int cmd_crashtest(const std::string& workload, const pjh::workloads::SweepOptions& options,
                  bool per_point, Report& out) {
  auto so = options;
  so.record_points = per_point;
  const auto r = pjh::workloads::run_sweep(workload, so);
  for (const auto& p : (per_point ? r.point_results : r.failures)) {
    ordered_json row;
    row["point"] = p.fences_applied;
    row["persist_point"] = p.persist_point;
    row["result"] = p.passed ? "pass" : "fail";
    if (!p.passed) row["detail"] = p.detail;
    out.row(row);
  }
  out.put("workload", r.workload).put("fences", r.fences).put("points", r.points)
      .put("passed", r.passed).put("failed", r.points - r.passed).put("seconds", r.seconds);
  for (const auto& [k, v] : r.counters) out.put(k, v);
  out.put("result", r.ok() ? "pass" : "fail");
  return r.ok() ? 0 : 1;
}

int cmd_bench(const std::string& suite, const std::vector<std::size_t>& objects, std::size_t types,
              Report& out) {
  namespace w = pjh::workloads;
  auto emit = [&](const std::vector<w::BenchRow>& rows) {
    for (const auto& b : rows) {
      ordered_json r;
      r["suite"] = b.suite;
      r["test"] = b.name;
      r["phase"] = b.phase;
      r["operations"] = b.operations;
      r["ms"] = b.ms;
      r["fences_issued"] = b.fences;
      out.row(r);
    }
  };
  if (suite == "micro") {
    emit(w::micro_bench(objects.empty() ? 100000 : objects.front()));
  } else if (suite == "jpab") {
    emit(w::jpab_bench(objects.empty() ? 10000 : objects.front()));
  } else if (suite == "load") {
    const std::vector<std::size_t> counts =
        objects.empty() ? std::vector<std::size_t>{200000, 500000, 1000000, 2000000} : objects;
    const auto rows = w::load_bench(counts, types);
    std::vector<double> x, ug, zero;
    for (const auto& l : rows) {
      ordered_json r;
      r["objects"] = l.objects;
      r["types"] = types;
      r["ug_ms"] = l.ug_ms;
      r["zero_ms"] = l.zero_ms;
      r["nullified"] = l.nullified;
      out.row(r);
      x.push_back(static_cast<double>(l.objects));
      ug.push_back(l.ug_ms);
      zero.push_back(l.zero_ms);
    }
    if (!rows.empty()) {
      const auto [lo, hi] = std::minmax_element(ug.begin(), ug.end());
      out.put("ug_spread", *lo > 0 ? *hi / *lo : 0.0);
      out.put("zero_r2", w::linear_r2(x, zero));
    }
  } else {
    throw pjh::Error(pjh::Errc::InvalidArgument, "unknown suite " + suite);
  }
  out.put("suite", suite);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heapctl: persistent heap operator tool"};
  app.require_subcommand(1, 1);

  std::string dir = ".";
  std::string name;
  std::uint64_t size = 64ULL << 20;
  std::string safety = "ug";
  std::string workload;
  bool sweep = false;
  bool per_point = false;
  std::string suite;
  std::vector<std::size_t> objects;
  std::size_t types = 20;
  std::uint64_t seed = 1;
  bool machine = false;

  app.add_flag("--machine", machine, "Print one JSON object instead of key=value lines");
  app.add_option("--dir", dir, "Directory holding heap files and the manifest");

  auto* create = app.add_subcommand("create", "Create and format a heap");
  create->add_option("--name", name)->required();
  create->add_option("--size", size, "Heap size (accepts K/M/G suffixes)")
      ->transform(CLI::AsSizeValue(false));

  auto* info = app.add_subcommand("info", "Print heap metadata");
  info->add_option("--name", name)->required();
  info->add_option("--safety", safety)->check(CLI::IsMember({"ug", "zero"}));

  auto* roots = app.add_subcommand("roots", "List root bindings");
  roots->add_option("--name", name)->required();

  auto* validate = app.add_subcommand("validate", "Check heap consistency");
  validate->add_option("--name", name)->required();

  auto* gc = app.add_subcommand("gc", "Run a collection and print statistics");
  gc->add_option("--name", name)->required();

  auto* crashtest = app.add_subcommand("crashtest", "Crash at every persist point of a workload");
  crashtest->add_option("--workload", workload)
      ->required()
      ->check(CLI::IsMember(pjh::workloads::sweep_workloads()));
  crashtest->add_flag("--sweep", sweep, "Sweep every persist point (the only mode)");
  crashtest->add_flag("--per-point", per_point, "Print one line per crash point");
  crashtest->add_option("--objects", objects, "Object count for allocation and graph workloads")
      ->expected(1);
  crashtest->add_option("--seed", seed);

  auto* bench = app.add_subcommand("bench", "Run a benchmark suite");
  bench->add_option("--suite", suite)->required()->check(CLI::IsMember({"micro", "load", "jpab"}));
  bench->add_option("--objects", objects, "Operation or object counts (comma separated for load)")
      ->delimiter(',');
  bench->add_option("--types", types, "Type count for the load suite");

  CLI11_PARSE(app, argc, argv);

  Report out(machine);
  int status = 0;
  try {
    if (*create) {
      status = cmd_create(dir, name, size, out);
    } else if (*info) {
      status = cmd_info(dir, name, parse_safety(safety), out);
    } else if (*roots) {
      status = cmd_roots(dir, name, out);
    } else if (*validate) {
      status = cmd_validate(dir, name, out);
    } else if (*gc) {
      status = cmd_gc(dir, name, out);
    } else if (*crashtest) {
      pjh::workloads::SweepOptions so;
      so.objects = objects.empty() ? 0 : objects.front();
      so.seed = seed;
      status = cmd_crashtest(workload, so, per_point, out);
    } else if (*bench) {
      status = cmd_bench(suite, objects, types, out);
    }
  } catch (const pjh::Error& e) {
    out.put("error", std::string(pjh::errc_name(e.code()))).put("detail", std::string(e.what()))
        .put("result", "fail");
    status = 1;
  }
  out.print();
  return status;
}
