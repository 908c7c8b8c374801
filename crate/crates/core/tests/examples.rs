macro_rules! example {
    ($module:ident, $file:literal, $test:ident) => {
        #[allow(dead_code)]
        #[path = $file]
        mod $module;

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(forward_backward, "../examples/forward_backward.rs", forward_backward_runs);
example!(oracle_check, "../examples/oracle_check.rs", oracle_check_runs);
example!(alignment_restricted, "../examples/alignment_restricted.rs", alignment_restricted_runs);
example!(fastemit, "../examples/fastemit.rs", fastemit_runs);
example!(min_latency, "../examples/min_latency.rs", min_latency_runs);
example!(train_toy, "../examples/train_toy.rs", train_toy_runs);
example!(tiny_network, "../examples/tiny_network.rs", tiny_network_runs);
example!(decode_latency, "../examples/decode_latency.rs", decode_latency_runs);
example!(tradeoff_sweep, "../examples/tradeoff_sweep.rs", tradeoff_sweep_runs);
example!(verify_suite, "../examples/verify_suite.rs", verify_suite_runs);
