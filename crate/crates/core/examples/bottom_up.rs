//! One decision over a binary state: evaluate a hand-built network in
//! likelihood and MEU mode.

use rspmn::{evaluate_bottom_up, EvalOptions, Evidence, Network, NodeId, NodeKind};

fn main() -> rspmn::Result<()> {
    // vars: 0 = weather, 1 = umbrella (decision), 2 = utility
    let nodes = vec![
        NodeKind::Categorical { var: 0, probs: vec![0.7, 0.3] },
        NodeKind::Categorical { var: 0, probs: vec![0.2, 0.8] },
        NodeKind::Utility { var: 2, value: 20.0 },
        NodeKind::Utility { var: 2, value: 70.0 },
        NodeKind::Utility { var: 2, value: 100.0 },
        NodeKind::Utility { var: 2, value: 0.0 },
        // take the umbrella
        NodeKind::Sum { children: vec![NodeId(2), NodeId(3)], weights: vec![0.3, 0.7] },
        // leave it
        NodeKind::Sum { children: vec![NodeId(4), NodeId(5)], weights: vec![0.7, 0.3] },
        NodeKind::Max { decision: 1, children: vec![NodeId(6), NodeId(7)], labels: vec![1, 0] },
        NodeKind::Product { children: vec![NodeId(0), NodeId(8)] },
        NodeKind::Product { children: vec![NodeId(1), NodeId(8)] },
        NodeKind::Sum { children: vec![NodeId(9), NodeId(10)], weights: vec![0.5, 0.5] },
    ];
    let net = Network::new(nodes, vec![NodeId(11)])?;

    let meu = evaluate_bottom_up(&net, &Evidence::new(3), None, EvalOptions::meu())?;
    let root = meu.values[net.root().0];
    println!("no evidence: likelihood {:.3}, meu {:.3}, umbrella choice {:?}", root.likelihood, root.eu, meu.choices[8]);

    let mut ev = Evidence::new(3);
    ev.set(0, 1).set(1, 0);
    let lik = evaluate_bottom_up(&net, &ev, None, EvalOptions::likelihood())?;
    let v = lik.values[net.root().0];
    println!("weather=1, no umbrella: likelihood {:.3}, expected utility {:.3}", v.likelihood, v.eu);
    println!("visited {} of {} nodes", lik.visits, net.len());
    Ok(())
}
