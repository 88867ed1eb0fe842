#include <catch2/catch_amalgamated.hpp>

#include "remat/simulate.hpp"
#include "test_helpers.hpp"

using namespace remat;

namespace {

// Minimal reference replayer, written independently of the Simulator class:
// tracks a set of resident ids and recomputes memory from scratch each step.
struct NaiveReplay {
    Micros makespan = 0;
    Bytes peak = 0;
};

NaiveReplay naive_replay(const CDGraph& g, const Schedule& s) {
    NaiveReplay r;
    std::vector<bool> res(g.dnodes.size(), false);
    res[g.input_data] = true;
    auto total = [&]() {
        Bytes t = 0;
        for (size_t d = 0; d < res.size(); ++d)
            if (res[d]) t += g.dnodes[d].size;
        return t;
    };
    r.peak = total();
    for (const ScheduleOp& op : s.ops) {
        if (op.kind == ScheduleOp::Compute) {
            int c = g.cnode_index(op.target);
            Bytes fresh = 0;
            for (int d : g.cnodes[c].outputs)
                if (!res[d]) fresh += g.dnodes[d].size;
            r.peak = std::max(r.peak, total() + g.cnodes[c].tmp_mem + fresh);
            for (int d : g.cnodes[c].outputs) res[d] = true;
            r.makespan += g.cnodes[c].time;
        } else if (op.kind == ScheduleOp::Forget) {
            res[g.dnode_index(op.target)] = false;
        }
    }
    return r;
}

}  // namespace

TEST_CASE("empty schedule reports zero makespan") {
    Chain chain = single_block_chain(testing::toy_block());
    Schedule s;
    SimulateOptions opts;
    opts.require_complete = false;
    SimReport rep = simulate(s, chain, -1, opts);
    CHECK(rep.makespan == 0);
    CHECK(rep.peak_mem == chain.blocks[0].input_size());  // the input is resident
}

TEST_CASE("single compute accounts temporaries and new outputs") {
    // input 0-sized so the arithmetic is bare: tmp 3 + output 5 -> peak 8
    CDGraph g = testing::toy_block();
    g.dnodes[g.input_data].size = 0;
    g.dnodes[g.dnode_index("d1")].size = 5;
    g.cnodes[g.cnode_index("f1")].tmp_mem = 3;
    Chain chain = single_block_chain(g);
    Schedule s;
    s.ops.push_back(ScheduleOp::compute(0, "f1"));
    SimulateOptions opts;
    opts.require_complete = false;
    SimReport rep = simulate(s, chain, -1, opts);
    CHECK(rep.peak_mem == 8);
    CHECK(rep.makespan == 2);
}

TEST_CASE("forget then use raises a dangling dependency") {
    CDGraph g = testing::toy_block();
    Chain chain = single_block_chain(g);
    Schedule s;
    s.ops.push_back(ScheduleOp::compute(0, "f1"));
    s.ops.push_back(ScheduleOp::forget(0, "d1"));
    s.ops.push_back(ScheduleOp::compute(0, "f2"));
    SimulateOptions opts;
    opts.require_complete = false;
    CHECK_THROWS_AS(simulate(s, chain, -1, opts), DanglingDependency);
}

TEST_CASE("forget of an absent tensor is rejected") {
    Chain chain = single_block_chain(testing::toy_block());
    Schedule s;
    s.ops.push_back(ScheduleOp::forget(0, "d1"));
    SimulateOptions opts;
    opts.require_complete = false;
    CHECK_THROWS_AS(simulate(s, chain, -1, opts), ForgetAbsent);
}

TEST_CASE("double loss is rejected") {
    Chain chain = single_block_chain(testing::toy_block());
    Schedule s;
    for (const char* id : {"f1", "f2", "loss", "loss"})
        s.ops.push_back(ScheduleOp::compute(0, id));
    SimulateOptions opts;
    opts.require_complete = false;
    CHECK_THROWS_AS(simulate(s, chain, -1, opts), DoubleLoss);
}

TEST_CASE("budget violations carry the excess") {
    CDGraph g = testing::toy_block();
    Chain chain = single_block_chain(g);
    Schedule s = no_recompute_schedule(g);
    try {
        simulate(s, chain, 10, {});
        FAIL("expected BudgetExceeded");
    } catch (const BudgetExceeded& e) {
        CHECK(e.excess > 0);
    }
}

TEST_CASE("eager and no-recompute schedules replay clean, eager peaks lower or equal") {
    std::mt19937 rng(11);
    for (int i = 0; i < 100; ++i) {
        testing::BlockGenConfig cfg;
        cfg.max_forwards = 3;
        CDGraph g = testing::random_block(rng, cfg);
        Chain chain = single_block_chain(g);
        SimReport eager = simulate(eager_free_schedule(g), chain, -1, {});
        SimReport full = simulate(no_recompute_schedule(g), chain, -1, {});
        CHECK(eager.peak_mem <= full.peak_mem);
        CHECK(eager.overhead == 0);
        CHECK(full.overhead == 0);
    }
}

TEST_CASE("toy block peaks match an independent naive replayer") {
    CDGraph g = testing::toy_block();
    for (const Schedule& s : {eager_free_schedule(g), no_recompute_schedule(g)}) {
        Chain chain = single_block_chain(g);
        SimReport rep = simulate(s, chain, -1, {});
        NaiveReplay ref = naive_replay(g, s);
        CHECK(rep.makespan == ref.makespan);
        CHECK(rep.peak_mem == ref.peak);
    }
    // frozen values for the 4-byte toy block, eager variant
    SimReport rep = simulate(eager_free_schedule(g), single_block_chain(g), -1, {});
    CHECK(rep.peak_mem == 20);
    CHECK(rep.makespan == 10);
}

TEST_CASE("forget-and-recompute replays with the expected peak") {
    CDGraph g = testing::toy_block();
    Chain chain = single_block_chain(g);
    Schedule s;
    // drop d1 before the loss, recompute it for b2
    for (const char* id : {"f1", "f2"}) s.ops.push_back(ScheduleOp::compute(0, id));
    s.ops.push_back(ScheduleOp::forget(0, "d1"));
    s.ops.push_back(ScheduleOp::compute(0, "loss"));
    s.ops.push_back(ScheduleOp::compute(0, "f1"));
    s.ops.push_back(ScheduleOp::compute(0, "b2"));
    for (const char* id : {"d1", "d2", "g2"}) s.ops.push_back(ScheduleOp::forget(0, id));
    s.ops.push_back(ScheduleOp::compute(0, "b1"));
    s.ops.push_back(ScheduleOp::forget(0, "g1"));
    SimReport rep = simulate(s, chain, -1, {});
    NaiveReplay ref = naive_replay(g, s);
    CHECK(rep.makespan == ref.makespan);
    CHECK(rep.peak_mem == ref.peak);
    CHECK(rep.overhead == 2);  // one extra run of f1
    CHECK(rep.mem_at_loss == 12);  // d0, d2 and the fresh g2
}

TEST_CASE("makespan is additive over compute ops") {
    std::mt19937 rng(3);
    testing::BlockGenConfig cfg;
    cfg.max_forwards = 3;
    CDGraph g = testing::random_block(rng, cfg);
    Chain chain = single_block_chain(g);
    Schedule s = no_recompute_schedule(g);
    SimReport rep = simulate(s, chain, -1, {});
    Micros sum = 0;
    for (const ScheduleOp& op : s.ops)
        if (op.kind == ScheduleOp::Compute) sum += g.cnodes[g.cnode_index(op.target)].time;
    CHECK(rep.makespan == sum);
}
