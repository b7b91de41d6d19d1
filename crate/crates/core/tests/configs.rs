use tilefarm::config::RunConfig;

#[test]
fn shipped_configs_validate() {
    let mini = RunConfig::from_toml(include_str!("../examples/configs/mini.toml")).unwrap();
    assert_eq!(mini.validate().unwrap().total_tiles(), 1365);
    assert_eq!(
        mini,
        RunConfig {
            output: "out-mini".into(),
            ..RunConfig::default()
        }
    );

    let tera = RunConfig::from_toml(include_str!("../examples/configs/terapixel.toml")).unwrap();
    let spec = tera.validate().unwrap();
    assert_eq!(spec.total_tasks(), 65_793);
    assert_eq!(tera.faults.deallocations.len(), 1);
    assert!(tera.health.enabled);
}
