// SPDX-License-Identifier: Apache-2.0
#include "pjh/workloads.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <numeric>
#include <set>
#include <unordered_map>

#include "pjh/errors.hpp"
#include "pjh/gc.hpp"
#include "pjh/layout.hpp"
#include "pjh/runtime.hpp"
#include "pjh/storage.hpp"
#include "pjh/validate.hpp"

namespace pjh::workloads {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

class Fnv {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::uint64_t width_mask(std::uint16_t width) {
  return width >= 8 ? ~std::uint64_t{0} : (std::uint64_t{1} << (width * 8)) - 1;
}

std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

std::uint64_t sized(std::uint64_t want) {
  return std::max(minimum_heap_size(), round_up(want, kRegionSize));
}

/// Fresh runtime over a crash image, loaded under the name `name`.
struct Reopened {
  std::shared_ptr<SimulatedStorage> storage = std::make_shared<SimulatedStorage>();
  std::unique_ptr<Runtime> runtime;
  Heap* heap = nullptr;

  Reopened(const std::string& name, std::shared_ptr<PersistentDevice> device,
           const LoadOptions& options = {}) {
    storage->adopt(name, std::move(device));
    runtime = std::make_unique<Runtime>(storage);
    heap = &runtime->load_heap(name, options);
  }
};

std::string first_error(const ValidationReport& r) {
  return r.ok() ? std::string() : "validate: " + r.errors.front();
}

void fill_random_scalars(Heap& heap, ObjRef o, const TypeDescriptor& t, std::mt19937_64& rng) {
  for (const auto& f : t.fields()) {
    if (f.kind == FieldKind::Scalar) heap.set_scalar(o, f.name, rng() & width_mask(f.width));
  }
}

std::vector<std::uint8_t> image_of(const PersistentDevice& dev) {
  auto span = dev.durable_image();
  return {span.begin(), span.end()};
}

}  // namespace

// ------------------------------------------------------------- signature

Signature traversal_signature(const Heap& heap) {
  Signature sig;
  Fnv h;
  std::unordered_map<std::uint64_t, std::uint64_t> ids;
  std::deque<std::uint64_t> queue;
  auto id_of = [&](std::uint64_t address) -> std::uint64_t {
    if (address == 0) return 0;
    if (!heap.contains(address)) return ~std::uint64_t{0};
    auto [it, inserted] = ids.emplace(address, ids.size() + 1);
    if (inserted) queue.push_back(address);
    return it->second;
  };
  for (const auto& [name, ref] : heap.roots()) {
    h.str(name);
    h.u64(id_of(ref.address));
  }
  std::vector<std::uint8_t> buf;
  while (!queue.empty()) {
    const ObjRef o{Space::Persistent, queue.front()};
    queue.pop_front();
    const TypeDescriptor& d = heap.descriptor_of(o);
    const std::uint64_t size = heap.object_size(o);
    h.str(d.name());
    ++sig.objects;
    sig.bytes += size;
    if (d.is_array()) {
      const std::uint64_t n = heap.array_length(o);
      h.u64(n);
      if (d.array()->element_kind == FieldKind::Reference) {
        for (std::uint64_t i = 0; i < n; ++i) h.u64(id_of(heap.get_element_word(o, i)));
      } else {
        buf.resize(n * d.array()->element_width);
        heap.read_raw(o.address + kArrayHeaderSize, buf);
        h.bytes(buf.data(), buf.size());
      }
      continue;
    }
    for (const auto& f : d.fields()) {
      if (f.kind == FieldKind::Reference) {
        h.u64(id_of(heap.read_word(o.address + f.offset)));
      } else {
        buf.resize(f.width);
        heap.read_raw(o.address + f.offset, buf);
        h.bytes(buf.data(), buf.size());
      }
    }
  }
  sig.hash = h.value();
  return sig;
}

// ----------------------------------------------------------------- types

std::vector<TypeDescriptor> make_types(std::size_t count) {
  static constexpr std::uint16_t kWidths[] = {8, 4, 2, 1};
  std::vector<TypeDescriptor> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto t = TypeDescriptor::instance("W" + std::to_string(i));
    t.scalar("id", 8);
    const std::size_t refs = 1 + i % 3;
    const std::size_t scalars = (i / 3) % 3;
    for (std::size_t r = 0; r < refs; ++r) t.reference("r" + std::to_string(r));
    for (std::size_t s = 0; s < scalars; ++s) t.scalar("s" + std::to_string(s), kWidths[(i + s) % 4]);
    out.push_back(std::move(t));
  }
  return out;
}

void register_types(Heap& heap, const std::vector<TypeDescriptor>& types) {
  for (const auto& t : types) heap.register_type(t);
}

// ------------------------------------------------------------ allocation

std::uint64_t alloc_heap_size(const AllocOptions& options) {
  return sized(options.objects * 96 + (2u << 20));
}

RootLog run_alloc_workload(Heap& heap, const AllocOptions& options, const FenceTrace* trace) {
  const auto types = make_types(options.types);
  register_types(heap, types);
  std::mt19937_64 rng(options.seed);
  std::vector<ObjRef> objects;
  objects.reserve(options.objects);
  RootLog log;
  const std::size_t every = std::max<std::size_t>(1, options.objects / std::max<std::size_t>(1, options.roots));
  for (std::size_t i = 0; i < options.objects; ++i) {
    const TypeDescriptor& t = heap.klass(types[rng() % types.size()].name());
    ObjRef o = heap.allocate(t);
    fill_random_scalars(heap, o, t, rng);
    heap.set_scalar(o, "id", i);
    for (const auto& f : t.fields()) {
      if (f.kind != FieldKind::Reference || objects.empty() || rng() % 4 == 0) continue;
      heap.set_ref(o, f.name, objects[rng() % objects.size()]);
    }
    heap.flush_object(o);
    objects.push_back(o);
    if ((i + 1) % every == 0 && log.size() < options.roots) {
      char name[16];
      std::snprintf(name, sizeof name, "r%02zu", log.size());
      heap.set_root(name, o);
      log.emplace_back(name, trace ? trace->fence_count() : 0);
    }
  }
  return log;
}

// -------------------------------------------------------------- GC graph

std::uint64_t gc_heap_size(const GraphOptions& options) {
  return sized(options.objects * 128 + (2u << 20));
}

std::size_t build_gc_graph(Heap& heap, const GraphOptions& options) {
  const auto types = make_types(options.types);
  register_types(heap, types);
  std::mt19937_64 rng(options.seed);
  const auto live_target =
      static_cast<std::size_t>(std::llround(options.objects * (1.0 - options.garbage)));
  std::vector<bool> is_live(options.objects, false);
  std::fill_n(is_live.begin(), live_target, true);
  std::shuffle(is_live.begin(), is_live.end(), rng);

  std::vector<ObjRef> all;
  std::vector<ObjRef> live;
  for (std::size_t i = 0; i < options.objects; ++i) {
    const TypeDescriptor& t = heap.klass(types[rng() % types.size()].name());
    ObjRef o = heap.allocate(t);
    fill_random_scalars(heap, o, t, rng);
    heap.set_scalar(o, "id", i);
    bool first_ref = true;
    for (const auto& f : t.fields()) {
      if (f.kind != FieldKind::Reference) continue;
      ObjRef target;
      if (is_live[i]) {
        // The first reference chains every live object to the previous one.
        if (first_ref) {
          target = live.empty() ? ObjRef::null() : live.back();
        } else if (!live.empty() && rng() % 3 != 0) {
          target = live[rng() % live.size()];
        }
      } else if (!all.empty() && rng() % 4 != 0) {
        target = all[rng() % all.size()];
      }
      first_ref = false;
      if (!target.is_null()) heap.set_ref(o, f.name, target);
    }
    all.push_back(o);
    if (is_live[i]) live.push_back(o);
  }
  heap.device().persist_all();
  if (!live.empty()) {
    heap.set_root("g00", live.back());
    for (std::size_t r = 1; r < options.roots; ++r) {
      char name[16];
      std::snprintf(name, sizeof name, "g%02zu", r);
      heap.set_root(name, live[rng() % live.size()]);
    }
  }
  return live.size();
}

// ---------------------------------------------------------- transactions

pjo::EntityDescriptor person_descriptor() {
  pjo::EntityDescriptor d("Person");
  d.scalar("id").string("first").string("last").scalar("age", 4).scalar("score").key("id");
  return d;
}

void run_basic_transactions(pjo::EntityManager& em, const TxnOptions& options,
                            const CommitHooks& hooks) {
  auto factory = em.enhance(person_descriptor());
  std::mt19937_64 rng(options.seed);
  std::vector<std::uint64_t> live;
  std::uint64_t next_key = 1;
  auto name = [&](const char* prefix) { return std::string(prefix) + std::to_string(rng() % 100000); };

  for (std::size_t i = 0; i < options.commits; ++i) {
    auto& txn = em.begin();
    switch (i % 5) {
      case 0:
      case 1:
        for (std::size_t b = 0; b < options.batch; ++b) {
          auto& p = factory.create();
          p.set("id", next_key);
          p.set_string("first", name("F"));
          p.set_string("last", name("L"));
          p.set("age", rng() % 100);
          p.set("score", rng());
          txn.persist(p);
          live.push_back(next_key++);
        }
        break;
      case 2:
      case 3:
        for (std::size_t b = 0; b < options.batch && !live.empty(); ++b) {
          auto* p = em.find("Person", live[rng() % live.size()]);
          txn.persist(*p);
          switch (rng() % 3) {
            case 0:
              p->set("age", rng() % 100);
              break;
            case 1:
              p->set("score", rng());
              break;
            default:
              p->set_string("last", name("U"));
              break;
          }
        }
        break;
      default:
        if (!live.empty()) {
          const std::size_t at = rng() % live.size();
          txn.remove(*em.find("Person", live[at]));
          live[at] = live.back();
          live.pop_back();
        }
        break;
    }
    if (hooks.before) hooks.before(i, txn);
    txn.commit();
    if (hooks.after) hooks.after(i, txn);
  }
}

// ---------------------------------------------------------------- sweeps

namespace {

void keep_failures(SweepReport& report, const std::vector<PointResult>& results,
                   const SweepOptions& options) {
  for (const auto& r : results) {
    ++report.points;
    if (options.record_points) report.point_results.push_back(r);
    if (r.passed) {
      ++report.passed;
    } else if (report.failures.size() < options.max_failures) {
      report.failures.push_back(r);
    }
  }
}

const auto kEveryPoint = [](std::size_t) { return true; };

void sweep_alloc(SweepReport& report, const SweepOptions& so, std::size_t default_objects) {
  AllocOptions ao;
  ao.objects = so.objects ? so.objects : default_objects;
  ao.seed = so.seed;
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  Heap& heap = rt.create_heap("alloc", alloc_heap_size(ao));
  FenceTrace trace;
  trace.attach(heap.device());
  const RootLog log = run_alloc_workload(heap, ao, &trace);
  trace.detach();
  report.fences = trace.fence_count();

  // Oracle: objects reachable from each root in the no-crash image.
  const auto final_image = trace.image_after(trace.fence_count());
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reach(log.size());
  std::vector<std::uint64_t> root_address(log.size());
  for (std::size_t r = 0; r < log.size(); ++r) {
    ObjRef root = heap.get_root(log[r].first);
    root_address[r] = root.address;
    std::set<std::uint64_t> seen;
    std::vector<std::uint64_t> stack{heap.offset_of(root.address)};
    while (!stack.empty()) {
      const std::uint64_t off = stack.back();
      stack.pop_back();
      if (!seen.insert(off).second) continue;
      const TypeDescriptor* klass = nullptr;
      const std::uint64_t size = heap.object_size_at(off, &klass);
      reach[r].emplace_back(off, size);
      heap.for_each_slot(off, *klass, size, [&](std::uint64_t slot) {
        const std::uint64_t w = heap.read_word(heap.address_of(slot));
        if (w) stack.push_back(heap.offset_of(w));
      });
    }
  }

  // replay_sweep visits points in order: the n-th call sees n fences applied.
  std::size_t next_point = 0;
  auto check = [&](const std::shared_ptr<PersistentDevice>& dev) -> std::string {
    const std::size_t applied = next_point++;
    Reopened h("alloc", dev);
    if (auto e = first_error(validate(*h.heap)); !e.empty()) return e;
    auto image = dev->durable_image();
    for (std::size_t r = 0; r < log.size(); ++r) {
      if (log[r].second > applied) continue;
      if (!h.heap->has_root(log[r].first)) return "root " + log[r].first + " lost";
      if (h.heap->get_root(log[r].first).address != root_address[r]) {
        return "root " + log[r].first + " changed";
      }
      for (const auto& [off, size] : reach[r]) {
        if (std::memcmp(image.data() + off, final_image.data() + off, size) != 0) {
          return "object at " + std::to_string(off) + " reachable from " + log[r].first +
                 " differs";
        }
      }
    }
    return {};
  };
  auto results = replay_sweep(trace, kEveryPoint, check);
  keep_failures(report, results, so);
}

void sweep_gc(SweepReport& report, const SweepOptions& so) {
  GraphOptions go;
  go.objects = so.objects ? so.objects : go.objects;
  go.seed = so.seed + 6;
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  Heap& heap = rt.create_heap("gc", gc_heap_size(go));
  report.counters["live_objects"] = build_gc_graph(heap, go);
  const Signature before = traversal_signature(heap);
  FenceTrace trace;
  trace.attach(heap.device());
  const GcStats stats = heap.collect();
  trace.detach();
  report.fences = trace.fence_count();
  report.counters["reclaimed_bytes"] = stats.reclaimed_bytes;
  const Signature after = traversal_signature(heap);
  if (!(before == after)) {
    report.points = 1;
    report.failures.push_back({0, 0, false, "collection changed the reachable graph"});
    return;
  }
  auto results = replay_sweep(trace, kEveryPoint, [&](const std::shared_ptr<PersistentDevice>& d) {
    Reopened h("gc", d);
    if (auto e = first_error(validate(*h.heap)); !e.empty()) return e;
    if (h.heap->metadata().gc_in_progress) return std::string("collection still marked in progress");
    if (!(traversal_signature(*h.heap) == after)) return std::string("graph differs from no-crash collection");
    return std::string();
  });
  keep_failures(report, results, so);
}

void sweep_create(SweepReport& report, const SweepOptions& so) {
  (void)so;
  auto device = std::make_shared<PersistentDevice>(minimum_heap_size());
  FenceTrace trace;
  trace.attach(*device);
  auto heap = Heap::format("create", device, AddressSpace::kHeapBase, 1);
  trace.detach();
  report.fences = trace.fence_count();
  const std::size_t total = trace.fence_count();
  std::size_t applied = 0;
  auto results = replay_sweep(trace, kEveryPoint, [&](const std::shared_ptr<PersistentDevice>& d) {
    const std::size_t k = applied++;
    try {
      Reopened h("create", d);
      return first_error(validate(*h.heap));
    } catch (const Error& e) {
      // A format that never finished must not look like a heap.
      if (k < total && e.code() == Errc::CorruptImage) return std::string();
      return std::string(e.what());
    }
  });
  keep_failures(report, results, so);
}

void sweep_remap(SweepReport& report, const SweepOptions& so) {
  GraphOptions go;
  go.objects = so.objects ? so.objects : 1000;
  go.seed = so.seed + 20;
  auto storage = std::make_shared<SimulatedStorage>();
  Signature expected;
  std::uint64_t old_hint = 0;
  {
    Runtime rt(storage);
    Heap& heap = rt.create_heap("remap", gc_heap_size(go));
    build_gc_graph(heap, go);
    expected = traversal_signature(heap);
    old_hint = heap.metadata().address_hint;
    rt.close_heap("remap");
  }
  auto device = storage->device("remap");
  FenceTrace trace;
  trace.attach(*device);
  {
    Runtime rt(storage);
    LoadOptions lo;
    lo.deny_hint = true;
    Heap& heap = rt.load_heap("remap", lo);
    if (heap.metadata().address_hint == old_hint) {
      report.points = 1;
      report.failures.push_back({0, 0, false, "load did not relocate the heap"});
      return;
    }
    rt.close_heap("remap");
  }
  trace.detach();
  report.fences = trace.fence_count();
  auto results = replay_sweep(trace, kEveryPoint, [&](const std::shared_ptr<PersistentDevice>& d) {
    Reopened h("remap", d);
    if (auto e = first_error(validate(*h.heap)); !e.empty()) return e;
    if (h.heap->metadata().remap_target != 0) return std::string("remap left pending");
    if (!(traversal_signature(*h.heap) == expected)) return std::string("graph differs after remap");
    return std::string();
  });
  keep_failures(report, results, so);
}

void sweep_txn(SweepReport& report, const SweepOptions& so) {
  TxnOptions to;
  to.commits = so.commits;
  to.seed = so.seed + 10;
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  Heap& heap = rt.create_heap("txn", sized(to.commits * to.batch * 512 + (4u << 20)));
  auto device = storage->device("txn");
  pjo::EntityManager em(rt, heap);

  const std::size_t sampled = std::min(so.sampled_commits, to.commits);
  const std::size_t block = std::max<std::size_t>(1, to.commits / std::max<std::size_t>(1, sampled));
  auto is_sampled = [&](std::size_t i) {
    return i / block < sampled && i % block == (i / block) % std::min<std::size_t>(block, 5);
  };

  FenceTrace trace;
  std::map<std::uint64_t, std::string> pre;
  std::set<std::uint64_t> dirty_words;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> table_ranges;
  std::uint64_t old_top = 0;

  CommitHooks hooks;
  hooks.before = [&](std::size_t i, pjo::Transaction& txn) {
    if (!is_sampled(i)) return;
    pre = em.dump("Person");
    dirty_words.clear();
    for (auto* e : txn.managed()) {
      if (e->binding().is_null()) continue;
      const auto& layout = heap.klass(e->descriptor().name());
      for (std::size_t f = 0; f < e->dirty_bitmap().size(); ++f) {
        if (!e->dirty_bitmap()[f]) continue;
        dirty_words.insert(heap.offset_of(e->binding().address + layout.fields()[f].offset) & ~7ULL);
      }
    }
    table_ranges.clear();
    const auto table = em.table_view("Person");
    for (std::uint64_t seg : table.segments) {
      const std::uint64_t lo = heap.offset_of(seg);
      table_ranges.emplace_back(lo, lo + heap.object_size({Space::Persistent, seg}));
    }
    old_top = heap.top();
    trace.attach(*device);
  };
  hooks.after = [&](std::size_t i, pjo::Transaction&) {
    if (!is_sampled(i)) return;
    trace.detach();
    report.fences += trace.fence_count();
    const auto post = em.dump("Person");

    // Field-level minimality: inside the data that existed before the
    // commit, only dirty field words and table slots may change.
    const auto& base = trace.base_image();
    const auto after = trace.image_after(trace.fence_count());
    std::uint64_t violations = 0;
    std::uint64_t changed = 0;
    for (std::uint64_t off = heap.data_start(); off < old_top; off += 8) {
      if (std::memcmp(base.data() + off, after.data() + off, 8) == 0) continue;
      ++changed;
      const bool in_table = std::any_of(table_ranges.begin(), table_ranges.end(),
                                        [&](const auto& r) { return off >= r.first && off < r.second; });
      if (!in_table && !dirty_words.count(off)) ++violations;
    }
    ++report.counters["diff_commits"];
    report.counters["diff_changed_words"] += changed;
    report.counters["diff_violations"] += violations;
    keep_failures(report,
                  {{0, 0, violations == 0,
                    violations ? "commit " + std::to_string(i) + " wrote " +
                                     std::to_string(violations) + " non-dirty words"
                               : std::string()}},
                  so);

    auto results = replay_sweep(trace, kEveryPoint, [&](const std::shared_ptr<PersistentDevice>& d) {
      Reopened h("txn", d);
      if (auto e = first_error(validate(*h.heap)); !e.empty()) return e;
      pjo::EntityManager em2(*h.runtime, *h.heap);
      em2.enhance(person_descriptor());
      const auto state = em2.dump("Person");
      if (state == pre) {
        ++report.counters["pre_states"];
      } else if (state == post) {
        ++report.counters["post_states"];
      } else {
        return "commit " + std::to_string(i) + ": torn state";
      }
      return std::string();
    });
    keep_failures(report, results, so);
  };
  run_basic_transactions(em, to, hooks);
  report.counters["sampled_commits"] = report.counters["diff_commits"];
}

}  // namespace

std::vector<std::string> sweep_workloads() {
  return {"alloc1k", "alloc10k", "gc", "txn", "create", "remap"};
}

SweepReport run_sweep(const std::string& workload, const SweepOptions& options) {
  SweepReport report;
  report.workload = workload;
  const auto t0 = Clock::now();
  if (workload == "alloc1k") {
    sweep_alloc(report, options, 1000);
  } else if (workload == "alloc10k") {
    sweep_alloc(report, options, 10000);
  } else if (workload == "gc") {
    sweep_gc(report, options);
  } else if (workload == "txn") {
    sweep_txn(report, options);
  } else if (workload == "create") {
    sweep_create(report, options);
  } else if (workload == "remap") {
    sweep_remap(report, options);
  } else {
    throw Error(Errc::InvalidArgument, "unknown workload " + workload);
  }
  report.seconds = ms_since(t0) / 1000.0;
  return report;
}

// ------------------------------------------------------------ benchmarks

double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return 0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0;
  return (sxy * sxy) / (sxx * syy);
}

std::vector<LoadRow> load_bench(const std::vector<std::size_t>& counts, std::size_t types,
                                std::size_t repetitions, std::uint64_t seed) {
  std::vector<LoadRow> rows;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  for (std::size_t n : counts) {
    auto storage = std::make_shared<SimulatedStorage>();
    Runtime rt(storage);
    {
      Heap& heap = rt.create_heap("load", sized(n * 80 + (4u << 20)));
      const auto descs = make_types(types);
      register_types(heap, descs);
      std::mt19937_64 rng(seed);
      std::vector<const TypeDescriptor*> ts;
      for (const auto& d : descs) ts.push_back(&heap.klass(d.name()));
      ObjRef prev;
      for (std::size_t i = 0; i < n; ++i) {
        ObjRef o = heap.allocate(*ts[i % ts.size()]);
        heap.set_scalar(o, "id", i);
        if (!prev.is_null()) heap.set_ref(o, "r0", prev);
        prev = o;
        if (i % 1024 == 0) heap.set_root("chain", o);
      }
      heap.set_root("chain", prev);
      rt.close_heap("load");
    }
    LoadRow row;
    row.objects = n;
    for (auto safety : {SafetyLevel::UserGuaranteed, SafetyLevel::Zeroing}) {
      std::vector<double> times;
      for (std::size_t r = 0; r < repetitions + 1; ++r) {
        LoadOptions lo;
        lo.safety = safety;
        const auto t0 = Clock::now();
        Heap& heap = rt.load_heap("load", lo);
        const double t = ms_since(t0);
        if (safety == SafetyLevel::Zeroing) row.nullified = heap.load_report().nullified;
        rt.close_heap("load");
        if (r > 0) times.push_back(t);  // first run warms caches
      }
      (safety == SafetyLevel::UserGuaranteed ? row.ug_ms : row.zero_ms) = median(times);
    }
    rows.push_back(row);
  }
  return rows;
}

GcOverhead gc_overhead(std::uint64_t heap_bytes, std::uint64_t seed) {
  GraphOptions go;
  go.objects = static_cast<std::size_t>(heap_bytes / 2 / 64);
  go.seed = seed;
  go.types = 8;
  GcOverhead out;
  out.heap_bytes = sized(heap_bytes);

  std::vector<std::uint8_t> image;
  {
    auto storage = std::make_shared<SimulatedStorage>();
    Runtime rt(storage);
    Heap& heap = rt.create_heap("gc", out.heap_bytes);
    build_gc_graph(heap, go);
    rt.close_heap("gc");
    image = image_of(*storage->device("gc"));
  }
  Signature sig[2];
  for (int mode = 0; mode < 2; ++mode) {
    Reopened h("gc", PersistentDevice::from_image(image));
    GcOptions options;
    options.persist = mode == 0;
    const GcStats s = h.heap->collect(options);
    (mode == 0 ? out.with_fences : out.without_fences) = s;
    sig[mode] = traversal_signature(*h.heap);
  }
  out.isomorphic = sig[0] == sig[1];
  out.pause_ratio = out.without_fences.pause_ns
                        ? static_cast<double>(out.with_fences.pause_ns) /
                              static_cast<double>(out.without_fences.pause_ns)
                        : 0.0;
  return out;
}

std::vector<BenchRow> micro_bench(std::size_t operations, std::uint64_t seed) {
  std::vector<BenchRow> rows;
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  Heap& heap = rt.create_heap("micro", sized(operations * 512 + (8u << 20)));
  std::mt19937_64 rng(seed);
  auto& dev = heap.device();
  auto measure = [&](const std::string& name, const std::string& phase, std::size_t ops,
                     const std::function<void(std::size_t)>& body) {
    const std::uint64_t f0 = dev.persist_point_count();
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < ops; ++i) body(i);
    rows.push_back({"micro", name, phase, ops, ms_since(t0), dev.persist_point_count() - f0});
  };

  // Tuple: an object with three scalar fields.
  auto tuple = TypeDescriptor::instance("Tuple");
  tuple.scalar("a").scalar("b").scalar("c");
  const auto& tt = heap.register_type(tuple);
  std::vector<ObjRef> tuples(operations);
  measure("tuple", "create", operations, [&](std::size_t i) {
    tuples[i] = heap.allocate(tt);
    heap.set_scalar(tuples[i], "a", i);
    heap.set_scalar(tuples[i], "b", i * 2);
    heap.set_scalar(tuples[i], "c", i * 3);
    heap.flush_object(tuples[i]);
  });
  std::uint64_t sink = 0;
  measure("tuple", "get", operations, [&](std::size_t i) {
    sink += heap.get_scalar(tuples[i], "a") + heap.get_scalar(tuples[i], "c");
  });
  measure("tuple", "set", operations, [&](std::size_t i) {
    heap.set_scalar(tuples[i], "b", rng());
    heap.flush_scalar(tuples[i], 1);
  });
  heap.set_root("tuples", tuples.empty() ? ObjRef::null() : tuples.back());

  // Array: fixed-length arrays of 8-byte elements.
  const auto& at = heap.register_type(TypeDescriptor::array_of("U64Array", FieldKind::Scalar, 8));
  constexpr std::size_t kLen = 16;
  std::vector<ObjRef> arrays((operations + kLen - 1) / kLen);
  measure("array", "create", arrays.size(), [&](std::size_t i) {
    arrays[i] = heap.allocate(at, kLen);
    for (std::size_t k = 0; k < kLen; ++k) heap.set_element(arrays[i], k, i + k);
    heap.flush_object(arrays[i]);
  });
  measure("array", "get", operations, [&](std::size_t i) {
    sink += heap.get_element(arrays[i / kLen], i % kLen);
  });
  measure("array", "set", operations, [&](std::size_t i) {
    heap.set_element(arrays[i / kLen], i % kLen, rng());
    heap.flush_array_element(arrays[i / kLen], i % kLen);
  });

  // Map: open-addressed table of entry objects.
  auto entry = TypeDescriptor::instance("MapEntry");
  entry.scalar("key").scalar("value");
  const auto& et = heap.register_type(entry);
  const auto& table_t = heap.register_type(TypeDescriptor::array_of("MapTable", FieldKind::Reference));
  const std::size_t map_ops = std::min<std::size_t>(operations, 8192);
  std::uint64_t cap = 16;
  while (cap < map_ops * 2) cap <<= 1;
  ObjRef table = heap.allocate(table_t, cap);
  heap.flush_object(table);
  heap.set_root("map", table);
  auto slot_of = [&](std::uint64_t key, bool insert) -> std::uint64_t {
    std::uint64_t s = (key * 0x9e3779b97f4a7c15ULL) >> 40 & (cap - 1);
    for (;;) {
      const std::uint64_t w = heap.get_element_word(table, s);
      if (w == 0) return insert ? s : cap;
      if (heap.get_scalar({Space::Persistent, w}, "key") == key) return s;
      s = (s + 1) & (cap - 1);
    }
  };
  measure("map", "create", map_ops, [&](std::size_t i) {
    ObjRef e = heap.allocate(et);
    heap.set_scalar(e, "key", i * 7919);
    heap.set_scalar(e, "value", i);
    heap.flush_object(e);
    const std::uint64_t s = slot_of(i * 7919, true);
    heap.set_element_ref(table, s, e);
    heap.flush_array_element(table, s);
  });
  measure("map", "get", map_ops, [&](std::size_t i) {
    sink += heap.get_element_word(table, slot_of(i * 7919, false));
  });
  measure("map", "set", map_ops, [&](std::size_t i) {
    ObjRef e = heap.get_element_ref(table, slot_of(i * 7919, false));
    heap.set_scalar(e, "value", rng());
    heap.flush_scalar(e, "value");
  });
  if (sink == 42) rows.front().operations += 0;  // keeps the reads observable
  return rows;
}

std::vector<BenchRow> jpab_bench(std::size_t entities, std::uint64_t seed) {
  std::vector<BenchRow> rows;
  constexpr std::size_t kBatch = 100;
  std::mt19937_64 rng(seed);

  struct Test {
    std::string name;
    std::vector<pjo::EntityDescriptor> types;
    std::string root_type;
  };
  pjo::EntityDescriptor person = person_descriptor();
  pjo::EntityDescriptor employee("Employee", person);
  employee.scalar("salary").string("dept");
  pjo::EntityDescriptor phone("Phone");
  phone.scalar("id").string("number").key("id");
  pjo::EntityDescriptor owner("Owner");
  owner.scalar("id").string("name").list("phones", "Phone").key("id");
  pjo::EntityDescriptor node("Node");
  node.scalar("id").scalar("value").reference("left", "Node").reference("right", "Node").key("id");

  const std::vector<Test> tests = {
      {"Basic", {person}, "Person"},
      {"Ext", {person, employee}, "Employee"},
      {"Collection", {phone, owner}, "Owner"},
      {"Node", {node}, "Node"},
  };

  for (const auto& test : tests) {
    auto storage = std::make_shared<SimulatedStorage>();
    Runtime rt(storage);
    Heap& heap = rt.create_heap("jpab", sized(entities * 2048 + (16u << 20)));
    auto& dev = heap.device();
    pjo::EntityManager em(rt, heap);
    for (const auto& t : test.types) em.enhance(t);
    auto factory = em.factory(test.root_type);
    std::uint64_t next_phone = 1u << 30;
    std::vector<pjo::ManagedEntity*> created;

    auto phase = [&](const std::string& name, const std::function<void(std::size_t, pjo::Transaction&)>& body) {
      const std::uint64_t f0 = dev.persist_point_count();
      const auto t0 = Clock::now();
      for (std::size_t start = 0; start < entities; start += kBatch) {
        auto& txn = em.begin();
        for (std::size_t i = start; i < std::min(entities, start + kBatch); ++i) body(i, txn);
        txn.commit();
      }
      rows.push_back({"jpab", test.name, name, entities, ms_since(t0), dev.persist_point_count() - f0});
    };

    phase("persist", [&](std::size_t i, pjo::Transaction& txn) {
      auto& e = factory.create();
      created.push_back(&e);
      e.set("id", i + 1);
      if (test.name == "Node") {
        e.set("value", rng());
        // Each node hangs below an earlier one, forming a binary tree.
        if (i > 0) {
          auto* parent = created[(i - 1) / 2];
          txn.persist(*parent);
          parent->set_ref(i % 2 ? "left" : "right", &e);
        }
      } else if (test.name == "Collection") {
        e.set_string("name", "owner" + std::to_string(i));
        std::vector<pjo::ManagedEntity*> phones;
        for (int k = 0; k < 3; ++k) {
          auto& p = em.factory("Phone").create();
          p.set("id", next_phone++);
          p.set_string("number", std::to_string(rng() % 10000000));
          phones.push_back(&p);
        }
        e.set_list("phones", phones);
      } else {
        e.set_string("first", "F" + std::to_string(i));
        e.set_string("last", "L" + std::to_string(i));
        e.set("age", i % 90);
        e.set("score", rng());
        if (test.name == "Ext") {
          e.set("salary", rng() % 100000);
          e.set_string("dept", "D" + std::to_string(i % 10));
        }
      }
      txn.persist(e);
    });
    std::uint64_t sink = 0;
    {
      const auto t0 = Clock::now();
      for (std::size_t i = 0; i < entities; ++i) {
        auto* e = em.find(test.root_type, i + 1);
        if (!e) continue;
        sink += e->get("id");
        if (test.name == "Collection") sink += e->get_list("phones").size();
      }
      rows.push_back({"jpab", test.name, "retrieve", entities, ms_since(t0), 0});
    }
    const std::string scalar = test.name == "Node" ? "value" : test.name == "Collection" ? "id" : "score";
    phase("update", [&](std::size_t i, pjo::Transaction& txn) {
      auto* e = em.find(test.root_type, i + 1);
      if (!e) return;
      txn.persist(*e);
      if (scalar == "id") {
        e->set_string("name", "renamed" + std::to_string(i));
      } else {
        e->set(scalar, rng());
      }
    });
    phase("delete", [&](std::size_t i, pjo::Transaction& txn) {
      if (auto* e = em.find(test.root_type, i + 1)) txn.remove(*e);
    });
    if (sink == 1) rows.back().operations += 0;
  }
  return rows;
}

}  // namespace pjh::workloads
