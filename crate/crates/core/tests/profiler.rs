//! Cost-model properties and the published magnitude/ratio bands.

use panfpn::profiler::{builtin, compare_variants, parse_arch, profile, profile_batch, resnet101, BUILTINS};

const TWO_MP: (usize, usize) = (1152, 1728);

#[test]
fn totals_are_sums_of_layers() {
    for name in BUILTINS {
        let r = profile(&builtin(name).unwrap(), (320, 480)).unwrap();
        assert_eq!(r.multiply_adds, r.layers.iter().map(|l| l.multiply_adds).sum::<u64>());
        assert_eq!(r.activations, r.layers.iter().map(|l| l.activations).sum::<u64>());
        assert!(r.layers.iter().filter(|l| l.op != "conv").all(|l| l.multiply_adds == 0 && l.activations == 0));
    }
}

#[test]
fn linear_in_batch_and_pixels() {
    for name in BUILTINS {
        let spec = builtin(name).unwrap();
        let one = profile(&spec, (256, 256)).unwrap();
        let three = profile_batch(&spec, (256, 256), 3).unwrap();
        assert_eq!(three.multiply_adds, 3 * one.multiply_adds);
        assert_eq!(three.activations, 3 * one.activations);
        let wide = profile(&spec, (256, 512)).unwrap();
        for (a, b) in one.layers.iter().zip(&wide.layers) {
            assert_eq!(2 * a.multiply_adds, b.multiply_adds, "{}", a.name);
            assert_eq!(2 * a.activations, b.activations, "{}", a.name);
        }
    }
}

#[test]
fn fpn_with_semantic_head_at_two_megapixels() {
    let r = profile(&builtin("r101-fpn").unwrap(), TWO_MP).unwrap();
    let macs = r.multiply_adds as f64 / 1e12;
    let acts = r.activations as f64 / 1e9;
    assert!((0.4..=0.6).contains(&macs), "{macs}");
    assert!((0.64..=0.96).contains(&acts), "{acts}");
}

#[test]
fn variant_ratios() {
    let c = compare_variants(&resnet101(), TWO_MP).unwrap();
    let m = |v: &str| c.row(v).unwrap().multiply_adds as f64;
    let d8_d16 = m("dilation-8") / m("dilation-16");
    let fpn_d16 = m("fpn") / m("dilation-16");
    let sym_fpn = m("symmetric-decoder") / m("fpn");
    assert!((2.5..=3.5).contains(&d8_d16), "{d8_d16}");
    assert!((0.7..=1.4).contains(&fpn_d16), "{fpn_d16}");
    assert!((1.5..=3.0).contains(&sym_fpn), "{sym_fpn}");
    assert_eq!(c.row("fpn").unwrap().multiply_adds_vs_fpn, 1.0);
    assert_eq!(c.to_csv().lines().count(), 5);
}

#[test]
fn custom_spec_with_fpn_decoder() {
    let mut text = String::from("name = toy\nlayer = conv name=s1 k=3 cin=3 cout=8 stride=4\n");
    let mut c = 8;
    for stage in ["s2", "s3", "s4"] {
        text.push_str(&format!("layer = conv name={stage} k=3 cin={c} cout={} stride=2\n", 2 * c));
        c *= 2;
    }
    text.push_str("stage = s1\nstage = s2\nstage = s3\nstage = s4\ndecoder = fpn channel_dim=16 head_classes=3 head_width=8\n");
    let spec = parse_arch(&text).unwrap();
    let r = profile(&spec, (64, 64)).unwrap();
    let cls = r.layers.iter().find(|l| l.name == "head.classifier").unwrap();
    assert_eq!(cls.output, [3, 16, 16]);
    assert_eq!(r.layers.last().unwrap().output, [3, 64, 64]);
    let sym = parse_arch(&text.replace("decoder = fpn channel_dim=16 head_classes=3 head_width=8", "decoder = symmetric"));
    assert!(profile(&sym.unwrap(), (64, 64)).is_ok());
}
