//! Prints the built-in scenario as TOML.

fn main() {
    let cfg = nanosim_core::ScenarioConfig::default();
    print!("{}", toml::to_string_pretty(&cfg).expect("serializable config"));
}
