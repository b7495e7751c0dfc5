//! Actor-critic training with softmax actors over a discrete codebook.
//!
//! With `centralized_critic` each agent's critic sees every observation and
//! every action (the multi-agent learner); without it the critic sees only the
//! agent's own pair (the single-agent baseline). Actors always act on their own
//! observation. Critics regress on `r + γ Q'(s', argmax π'(s'))`; actors follow
//! a score-function gradient whose advantage is the critic's value of a sampled
//! action minus its value of the greedy action.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Snapshot;
use super::codebook::Codebook;
use super::env::MultiAgentEnv;
use super::nn::{self, Activation, Gradients, Mlp, Optimizer, OptimizerKind};
use super::LearnerError;
use crate::config::SimConfig;
use crate::decision::ActionMatrix;
use crate::llm::CaseSet;
use crate::policy::{DecisionContext, Policy, PolicyError};

/// Scale of the actor's output layer at initialisation; keeps the first
/// policy close to uniform.
const ACTOR_HEAD_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub hidden: [usize; 3],
    /// Activation of the third hidden layer; the first two are ReLU.
    pub third_activation: Activation,
    pub centralized_critic: bool,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_optimizer: OptimizerKind,
    pub critic_optimizer: OptimizerKind,
    /// Adam denominator floor. Gradients well below it take steps smaller
    /// than the learning rate instead of being rescaled to full size.
    pub adam_eps: f64,
    /// Weight of the policy entropy bonus in the actor loss.
    pub entropy_coef: f64,
    /// Gradient steps that train only the critics before the actors start.
    pub actor_delay: usize,
    pub gamma: f64,
    pub soft_update_lambda: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between gradient steps.
    pub train_every: usize,
    /// Transitions collected before the first gradient step.
    pub warmup: usize,
    pub episodes: usize,
    pub episode_len: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the episodes over which ε decays linearly.
    pub eps_anneal_frac: f64,
    pub plateau_window: usize,
    pub plateau_rel_std: f64,
    pub checkpoint_every: usize,
    /// Greedy slots rolled out to build the exported case set.
    pub export_slots: usize,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 64, 64],
            third_activation: Activation::Tanh,
            centralized_critic: true,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            actor_optimizer: OptimizerKind::Adam,
            critic_optimizer: OptimizerKind::Sgd,
            adam_eps: 1e-8,
            entropy_coef: 0.03,
            actor_delay: 0,
            gamma: 0.95,
            soft_update_lambda: 0.01,
            replay_capacity: 100_000,
            batch_size: 64,
            train_every: 10,
            warmup: 64,
            episodes: 2000,
            episode_len: 50,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_frac: 0.5,
            plateau_window: 200,
            plateau_rel_std: 0.05,
            checkpoint_every: 100,
            export_slots: 200,
            seed: 1,
        }
    }
}

impl LearnerConfig {
    pub fn marl() -> Self {
        Self::default()
    }

    /// Local critic, ReLU in every hidden layer.
    pub fn sarl() -> Self {
        Self {
            centralized_critic: false,
            third_activation: Activation::Relu,
            ..Self::default()
        }
    }

    /// Takes γ, λ and the seed from a simulation config.
    pub fn with_sim(mut self, sim: &SimConfig) -> Self {
        self.gamma = sim.gamma;
        self.soft_update_lambda = sim.soft_update_lambda;
        self.seed = sim.seed;
        self
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = (self.eps_anneal_frac * self.episodes as f64).max(1.0);
        let f = (episode as f64 / span).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * f
    }

    fn hidden_activations(&self) -> [Activation; 3] {
        [Activation::Relu, Activation::Relu, self.third_activation]
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
}

#[derive(Debug, Clone)]
struct Transition {
    obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Replay {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl Replay {
    fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean per-step reward of each episode, per agent.
    pub episode_rewards: Vec<Vec<f64>>,
    /// Mean over agents of `episode_rewards`.
    pub mean_curve: Vec<f64>,
    pub plateaued: bool,
    pub gradient_steps: usize,
    pub last_critic_loss: f64,
}

impl TrainingReport {
    /// Mean of the curve over a fractional window `[from, to)`.
    pub fn window_mean(&self, from: f64, to: f64) -> f64 {
        let n = self.mean_curve.len();
        let (a, b) = ((from * n as f64) as usize, ((to * n as f64) as usize).max(1));
        let w = &self.mean_curve[a.min(n - 1)..b.min(n)];
        w.iter().sum::<f64>() / w.len() as f64
    }
}

/// Rewards have plateaued when their spread over the last `window` episodes
/// is below `rel_std` of their mean magnitude.
pub fn plateau(curve: &[f64], window: usize, rel_std: f64) -> bool {
    if window == 0 || curve.len() < window {
        return false;
    }
    let w = &curve[curve.len() - window..];
    let mean = w.iter().sum::<f64>() / window as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / window as f64;
    var.sqrt() < rel_std * mean.abs()
}

/// Softmax policy of an actor for a batch of observations.
pub fn actor_forward(actor: &Mlp, obs: &Array2<f64>) -> Array2<f64> {
    nn::softmax_rows(&actor.forward(obs))
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(probs: ndarray::ArrayView1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Mean squared TD error and its gradient.
pub fn critic_loss_grad(critic: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> (f64, Gradients) {
    let tape = critic.forward_tape(x);
    let err = tape.output() - y;
    let b = x.nrows() as f64;
    let loss = err.mapv(|e| e * e).sum() / b;
    let (g, _) = critic.backward(&tape, err * (2.0 / b));
    (loss, g)
}

/// `−mean_b [A_b log π(a_b | s_b) + c H(π(· | s_b))]` and its gradient.
pub fn actor_pg_loss_grad(
    actor: &Mlp,
    obs: &Array2<f64>,
    actions: &[usize],
    advantage: &[f64],
    entropy_coef: f64,
) -> (f64, Gradients) {
    let tape = actor.forward_tape(obs);
    let probs = nn::softmax_rows(tape.output());
    actor_pg_from_tape(actor, &tape, &probs, actions, advantage, entropy_coef)
}

/// [`actor_pg_loss_grad`] reusing a forward pass and its softmax.
pub fn actor_pg_from_tape(
    actor: &Mlp,
    tape: &nn::Tape,
    probs: &Array2<f64>,
    actions: &[usize],
    advantage: &[f64],
    entropy_coef: f64,
) -> (f64, Gradients) {
    let b = probs.nrows() as f64;
    let mut loss = 0.0;
    let mut d = probs.clone();
    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
        let a = actions[i];
        loss -= advantage[i] * probs[[i, a]].max(1e-300).ln();
        row[a] -= 1.0;
        row *= advantage[i] / b;
        if entropy_coef != 0.0 {
            let p = probs.row(i);
            let logp = p.mapv(|x| x.max(1e-300).ln());
            let h = -(&p * &logp).sum();
            loss -= entropy_coef * h;
            // ∂H/∂z_j = −p_j (log p_j + H)
            row.zip_mut_with(&(&p * &(logp + h)), |r, g| *r += entropy_coef * g / b);
        }
    }
    let (g, _) = actor.backward(tape, d);
    (loss / b, g)
}

/// Normalised entropy (1 = uniform) of a probability row.
pub fn normalized_entropy(probs: ndarray::ArrayView1<f64>) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h / (probs.len() as f64).ln()
}

pub struct Trainer {
    pub config: LearnerConfig,
    pub agents: Vec<Agent>,
    n_agents: usize,
    obs_dim: usize,
    n_actions: usize,
    features: Array2<f64>,
    replay: Replay,
    rng: ChaCha8Rng,
    gradient_steps: usize,
}

impl Trainer {
    pub fn new(config: LearnerConfig, env: &dyn MultiAgentEnv) -> Self {
        let (n, od, na, afd) = (env.n_agents(), env.obs_dim(), env.n_actions(), env.action_feature_dim());
        let mut features = Array2::zeros((na, afd));
        for a in 0..na {
            for (j, f) in env.action_features(a).into_iter().enumerate() {
                features[[a, j]] = f;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let acts = config.hidden_activations();
        let [h1, h2, h3] = config.hidden;
        let critic_in = if config.centralized_critic { n * (od + afd) } else { od + afd };
        let agents = (0..n)
            .map(|_| {
                let actor = Mlp::new(&[od, h1, h2, h3, na], &acts, ACTOR_HEAD_SCALE, &mut rng);
                let critic = Mlp::new(&[critic_in, h1, h2, h3, 1], &acts, 1.0, &mut rng);
                Agent {
                    actor_opt: Optimizer::new(config.actor_optimizer, &actor, config.actor_lr, config.adam_eps),
                    critic_opt: Optimizer::new(config.critic_optimizer, &critic, config.critic_lr, config.adam_eps),
                    actor_target: actor.clone(),
                    critic_target: critic.clone(),
                    actor,
                    critic,
                }
            })
            .collect();
        let replay = Replay {
            capacity: config.replay_capacity.max(1),
            items: Vec::new(),
            next: 0,
        };
        Self {
            config,
            agents,
            n_agents: n,
            obs_dim: od,
            n_actions: na,
            features,
            replay,
            rng,
            gradient_steps: 0,
        }
    }

    pub fn critic_input_width(&self) -> usize {
        self.agents[0].critic.input_width()
    }

    pub fn actors(&self) -> Vec<Mlp> {
        self.agents.iter().map(|a| a.actor.clone()).collect()
    }

    fn obs_row(&self, obs: &[Vec<f64>], agent: usize) -> Array2<f64> {
        Array2::from_shape_vec((1, self.obs_dim), obs[agent].clone()).expect("observation width")
    }

    /// ε-greedy over the codebook, otherwise a draw from the actor.
    pub fn act(&mut self, obs: &[Vec<f64>], eps: f64) -> Vec<usize> {
        (0..self.n_agents)
            .map(|n| {
                if self.rng.random::<f64>() < eps {
                    self.rng.random_range(0..self.n_actions)
                } else {
                    let p = actor_forward(&self.agents[n].actor, &self.obs_row(obs, n));
                    sample_index(p.row(0), &mut self.rng)
                }
            })
            .collect()
    }

    pub fn greedy(&self, obs: &[Vec<f64>]) -> Vec<usize> {
        (0..self.n_agents)
            .map(|n| argmax(self.agents[n].actor.forward(&self.obs_row(obs, n)).row(0)))
            .collect()
    }

    pub fn policy_probs(&self, agent: usize, obs: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("observation width");
        actor_forward(&self.agents[agent].actor, &x).row(0).to_vec()
    }

    fn critic_input(&self, agent: usize, s: &Array2<f64>, acts: &[Vec<usize>]) -> Array2<f64> {
        let afd = self.features.ncols();
        let od = self.obs_dim;
        let b = s.nrows();
        if self.config.centralized_critic {
            let n = self.n_agents;
            let mut x = Array2::zeros((b, n * (od + afd)));
            x.slice_mut(s![.., ..n * od]).assign(s);
            for (i, a) in acts.iter().enumerate() {
                for (j, &aj) in a.iter().enumerate() {
                    let off = n * od + j * afd;
                    x.slice_mut(s![i, off..off + afd]).assign(&self.features.row(aj));
                }
            }
            x
        } else {
            let mut x = Array2::zeros((b, od + afd));
            x.slice_mut(s![.., ..od])
                .assign(&s.slice(s![.., agent * od..(agent + 1) * od]));
            for (i, a) in acts.iter().enumerate() {
                x.slice_mut(s![i, od..]).assign(&self.features.row(a[agent]));
            }
            x
        }
    }

    /// One critic and one actor step per agent on `batch`, then target updates.
    /// Returns the critic losses.
    fn train_step(&mut self, batch: &[usize]) -> Result<Vec<f64>, String> {
        let (n, od) = (self.n_agents, self.obs_dim);
        let b = batch.len();
        let mut s = Array2::zeros((b, n * od));
        let mut s2 = Array2::zeros((b, n * od));
        let mut acts = Vec::with_capacity(b);
        let mut rewards = Array2::zeros((b, n));
        for (i, &idx) in batch.iter().enumerate() {
            let t = &self.replay.items[idx];
            s.row_mut(i).assign(&ndarray::ArrayView1::from(&t.obs));
            s2.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_obs));
            rewards.row_mut(i).assign(&ndarray::ArrayView1::from(&t.rewards));
            acts.push(t.actions.clone());
        }
        let own = |m: &Array2<f64>, j: usize| m.slice(s![.., j * od..(j + 1) * od]).to_owned();

        let mut next_acts = vec![vec![0; n]; b];
        for j in 0..n {
            let logits = self.agents[j].actor_target.forward(&own(&s2, j));
            for (i, row) in logits.rows().into_iter().enumerate() {
                next_acts[i][j] = argmax(row);
            }
        }

        let mut losses = Vec::with_capacity(n);
        for j in 0..n {
            let q_next = self.agents[j].critic_target.forward(&self.critic_input(j, &s2, &next_acts));
            let y = &rewards.slice(s![.., j..j + 1]) + &(q_next * self.config.gamma);
            let x = self.critic_input(j, &s, &acts);
            let (loss, g) = critic_loss_grad(&self.agents[j].critic, &x, &y);
            if !loss.is_finite() {
                return Err(format!("critic loss of agent {j} is {loss}"));
            }
            let agent = &mut self.agents[j];
            agent.critic_opt.step(&mut agent.critic, &g);
            losses.push(loss);

            if self.gradient_steps < self.config.actor_delay {
                continue;
            }
            let obs_j = own(&s, j);
            let tape = self.agents[j].actor.forward_tape(&obs_j);
            let probs = nn::softmax_rows(tape.output());
            let mut sampled = Vec::with_capacity(b);
            let mut acts_hat = acts.clone();
            let mut acts_greedy = acts.clone();
            for (i, row) in probs.rows().into_iter().enumerate() {
                let a = sample_index(row, &mut self.rng);
                sampled.push(a);
                acts_hat[i][j] = a;
                acts_greedy[i][j] = argmax(row);
            }
            let critic = &self.agents[j].critic;
            let q_hat = critic.forward(&self.critic_input(j, &s, &acts_hat));
            let q_greedy = critic.forward(&self.critic_input(j, &s, &acts_greedy));
            let adv: Vec<f64> = (q_hat - q_greedy).index_axis(Axis(1), 0).to_vec();
            let (aloss, g) =
                actor_pg_from_tape(&self.agents[j].actor, &tape, &probs, &sampled, &adv, self.config.entropy_coef);
            if !aloss.is_finite() {
                return Err(format!("actor loss of agent {j} is {aloss}"));
            }
            let agent = &mut self.agents[j];
            agent.actor_opt.step(&mut agent.actor, &g);
        }
        let lambda = self.config.soft_update_lambda;
        for a in &mut self.agents {
            nn::soft_update(&mut a.actor_target, &a.actor, lambda).map_err(|e| e.to_string())?;
            nn::soft_update(&mut a.critic_target, &a.critic, lambda).map_err(|e| e.to_string())?;
            if !a.actor.is_finite() || !a.critic.is_finite() {
                return Err("non-finite parameters".into());
            }
        }
        self.gradient_steps += 1;
        Ok(losses)
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut nets = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            nets.push((format!("agent{i}.actor"), a.actor.clone()));
            nets.push((format!("agent{i}.critic"), a.critic.clone()));
            nets.push((format!("agent{i}.actor_target"), a.actor_target.clone()));
            nets.push((format!("agent{i}.critic_target"), a.critic_target.clone()));
        }
        Snapshot { nets }
    }

    /// Replaces every network by the one of the same name in `snap`.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<(), LearnerError> {
        for (i, a) in self.agents.iter_mut().enumerate() {
            for (suffix, net) in [
                ("actor", &mut a.actor),
                ("critic", &mut a.critic),
                ("actor_target", &mut a.actor_target),
                ("critic_target", &mut a.critic_target),
            ] {
                let name = format!("agent{i}.{suffix}");
                let found = snap
                    .get(&name)
                    .ok_or_else(|| LearnerError::Checkpoint(format!("missing network {name}")))?;
                if found.sizes() != net.sizes() {
                    return Err(LearnerError::Checkpoint(format!("{name} has shape {:?}", found.sizes())));
                }
                *net = found.clone();
            }
        }
        Ok(())
    }

    pub fn train(&mut self, env: &mut dyn MultiAgentEnv) -> Result<TrainingReport, LearnerError> {
        let cfg = self.config.clone();
        let n = self.n_agents;
        let mut episode_rewards = vec![Vec::with_capacity(cfg.episodes); n];
        let mut mean_curve = Vec::with_capacity(cfg.episodes);
        let mut last_stable: Option<Snapshot> = None;
        let mut last_loss = f64::NAN;
        let mut steps = 0usize;
        for ep in 0..cfg.episodes {
            let eps = cfg.epsilon(ep);
            let mut obs = env.reset(ep as u64)?;
            let mut sums = vec![0.0; n];
            for _ in 0..cfg.episode_len {
                let actions = self.act(&obs, eps);
                let step = env.step(&actions)?;
                for (s, r) in sums.iter_mut().zip(&step.rewards) {
                    *s += r;
                }
                self.replay.push(Transition {
                    obs: obs.concat(),
                    actions,
                    rewards: step.rewards,
                    next_obs: step.next_obs.concat(),
                });
                obs = step.next_obs;
                steps += 1;
                if self.replay.items.len() >= cfg.warmup.max(1) && steps % cfg.train_every.max(1) == 0 {
                    let len = self.replay.items.len();
                    let batch: Vec<usize> = (0..cfg.batch_size).map(|_| self.rng.random_range(0..len)).collect();
                    match self.train_step(&batch) {
                        Ok(l) => last_loss = l.iter().sum::<f64>() / l.len() as f64,
                        Err(reason) => {
                            return Err(LearnerError::Diverged {
                                episode: ep,
                                reason,
                                last_stable: last_stable.map(Box::new),
                            })
                        }
                    }
                }
            }
            let len = cfg.episode_len.max(1) as f64;
            for (i, s) in sums.iter().enumerate() {
                episode_rewards[i].push(s / len);
            }
            mean_curve.push(sums.iter().sum::<f64>() / (len * n as f64));
            if cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0 {
                last_stable = Some(self.snapshot());
            }
        }
        Ok(TrainingReport {
            plateaued: plateau(&mean_curve, cfg.plateau_window, cfg.plateau_rel_std),
            episode_rewards,
            mean_curve,
            gradient_steps: self.gradient_steps,
            last_critic_loss: last_loss,
        })
    }

    /// Mean per-agent reward of the greedy joint policy over one episode.
    pub fn evaluate_greedy(&self, env: &mut dyn MultiAgentEnv, episode: u64, len: usize) -> Result<f64, LearnerError> {
        let mut obs = env.reset(episode)?;
        let mut total = 0.0;
        for _ in 0..len {
            let step = env.step(&self.greedy(&obs))?;
            total += step.rewards.iter().sum::<f64>() / step.rewards.len() as f64;
            obs = step.next_obs;
        }
        Ok(total / len.max(1) as f64)
    }

    /// Rolls out the greedy policy and collects the environment's cases.
    pub fn export_cases(&self, env: &mut dyn MultiAgentEnv, slots: usize) -> Result<CaseSet, LearnerError> {
        let mut cases = CaseSet::new();
        let mut obs = env.reset(self.config.episodes as u64)?;
        for _ in 0..slots {
            let step = env.step(&self.greedy(&obs))?;
            if let Some(c) = env.last_case() {
                cases.push(c);
            }
            obs = step.next_obs;
        }
        Ok(cases)
    }
}

/// Trains on `env` and exports the greedy rollout as a case set.
pub fn marl_train(
    env: &mut dyn MultiAgentEnv,
    config: LearnerConfig,
) -> Result<(Trainer, TrainingReport, CaseSet), LearnerError> {
    let mut trainer = Trainer::new(config, env);
    let report = trainer.train(env)?;
    let cases = trainer.export_cases(env, trainer.config.export_slots)?;
    Ok((trainer, report, cases))
}

/// Greedy decisions of trained actors, one per vehicle.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub label: String,
    pub actors: Vec<Mlp>,
    pub codebook: Codebook,
}

impl LearnedPolicy {
    /// Rebuilds the policy from the `agent{i}.actor` networks of a snapshot.
    pub fn from_snapshot(label: impl Into<String>, snap: &Snapshot) -> Result<Self, LearnerError> {
        let mut actors = Vec::new();
        while let Some(a) = snap.get(&format!("agent{}.actor", actors.len())) {
            actors.push(a.clone());
        }
        let Some(first) = actors.first() else {
            return Err(LearnerError::Checkpoint("no agent0.actor network".into()));
        };
        let width = first.output_width();
        let k = (1..8)
            .find(|&k| Codebook::new(k).size() == width)
            .ok_or_else(|| LearnerError::Checkpoint(format!("actor output width {width} is not a codebook size")))?;
        Ok(Self {
            label: label.into(),
            actors,
            codebook: Codebook::new(k),
        })
    }
}

impl Trainer {
    pub fn learned_policy(&self, label: impl Into<String>, k: usize) -> LearnedPolicy {
        LearnedPolicy {
            label: label.into(),
            actors: self.actors(),
            codebook: Codebook::new(k),
        }
    }
}

impl Policy for LearnedPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError> {
        let (n, k) = (ctx.config.n_vehicles, ctx.config.n_task_types);
        if n != self.actors.len() || k != self.codebook.n_types() {
            return Err(PolicyError::Unsupported(format!(
                "{} was trained for {} vehicles and {} task types, scenario has {n} and {k}",
                self.label,
                self.actors.len(),
                self.codebook.n_types()
            )));
        }
        let mut out = ActionMatrix::filled(n, k, 0.0, 0.0);
        for (v, actor) in self.actors.iter().enumerate() {
            let x = ctx.state.slice(s![v..v + 1, ..]).to_owned();
            let idx = argmax(actor.forward(&x).row(0));
            let (w, a) = self.codebook.decode(idx)?;
            out.set_vehicle(v, &w, &a);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::env::{BanditEnv, ConstantReward, CoordinationEnv, VecEnv};

    fn small(centralized: bool) -> LearnerConfig {
        LearnerConfig {
            hidden: [8, 8, 8],
            centralized_critic: centralized,
            ..LearnerConfig::default()
        }
    }

    #[test]
    fn epsilon_schedule() {
        let c = LearnerConfig {
            episodes: 100,
            ..LearnerConfig::default()
        };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(25) - 0.525).abs() < 1e-12);
        assert!((c.epsilon(50) - 0.05).abs() < 1e-12);
        assert!((c.epsilon(99) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn plateau_detection() {
        assert!(plateau(&[1.0; 300], 200, 0.05));
        let noisy: Vec<f64> = (0..300).map(|i| if i % 2 == 0 { 0.5 } else { 1.5 }).collect();
        assert!(!plateau(&noisy, 200, 0.05));
        assert!(!plateau(&[1.0; 10], 200, 0.05));
    }

    #[test]
    fn critic_widths() {
        let env = CoordinationEnv;
        assert_eq!(Trainer::new(small(true), &env).critic_input_width(), 2 * (1 + 2));
        assert_eq!(Trainer::new(small(false), &env).critic_input_width(), 1 + 2);
    }

    #[test]
    fn zero_target_regression_converges() {
        // identical transitions, r = 0, γ = 0: the critic target is 0
        let env = CoordinationEnv;
        let cfg = LearnerConfig {
            gamma: 0.0,
            batch_size: 16,
            ..LearnerConfig::marl()
        };
        let mut t = Trainer::new(cfg, &env);
        t.replay.push(Transition {
            obs: vec![1.0, 1.0],
            actions: vec![0, 1],
            rewards: vec![0.0, 0.0],
            next_obs: vec![1.0, 1.0],
        });
        let batch = vec![0; 16];
        let mut prev = f64::INFINITY;
        for step in 0..100 {
            let loss = t.train_step(&batch).unwrap()[0];
            assert!(loss <= prev, "step {step}: {loss} > {prev}");
            prev = loss;
        }
    }

    fn finite_difference_check(net: &mut Mlp, loss: impl Fn(&Mlp) -> f64, analytic: &[f64]) {
        let base = net.params();
        let h = 1e-5;
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[i] += h;
            net.set_params(&p).unwrap();
            let up = loss(net);
            p[i] -= 2.0 * h;
            net.set_params(&p).unwrap();
            let down = loss(net);
            net.set_params(&base).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: analytic {a}, numeric {fd}");
        }
    }

    #[test]
    fn critic_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let acts = [Activation::Relu, Activation::Relu, Activation::Tanh];
        let mut critic = Mlp::new(&[4, 5, 5, 5, 1], &acts, 1.0, &mut rng);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 1), |_| rng.random_range(-1.0..1.0));
        let (_, g) = critic_loss_grad(&critic, &x, &y);
        finite_difference_check(&mut critic, |c| critic_loss_grad(c, &x, &y).0, &g.flatten());
    }

    #[test]
    fn actor_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let acts = [Activation::Relu, Activation::Relu, Activation::Tanh];
        let mut actor = Mlp::new(&[3, 5, 5, 5, 7], &acts, 1.0, &mut rng);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let a: Vec<usize> = (0..5).map(|_| rng.random_range(0..7)).collect();
        let adv: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        for c in [0.0, 0.05] {
            let (_, g) = actor_pg_loss_grad(&actor, &x, &a, &adv, c);
            finite_difference_check(&mut actor, |n| actor_pg_loss_grad(n, &x, &a, &adv, c).0, &g.flatten());
        }
    }

    #[test]
    fn fresh_actor_is_near_uniform() {
        let env = BanditEnv { n_arms: 30, good_arm: 3 };
        let t = Trainer::new(LearnerConfig::default(), &env);
        let p = t.policy_probs(0, &[1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(normalized_entropy(ndarray::ArrayView1::from(&p)) > 0.999);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let cfg = LearnerConfig {
            episodes: 20,
            episode_len: 10,
            warmup: 16,
            batch_size: 16,
            train_every: 1,
            ..small(true)
        };
        let run = || {
            let mut env = CoordinationEnv;
            let mut t = Trainer::new(cfg.clone(), &env);
            let r = t.train(&mut env).unwrap();
            (r, t.snapshot())
        };
        let (r1, s1) = run();
        let (r2, s2) = run();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn restore_round_trip() {
        let env = CoordinationEnv;
        let mut t = Trainer::new(small(true), &env);
        let snap = t.snapshot();
        let other = Trainer::new(LearnerConfig { seed: 9, ..small(true) }, &env);
        t.restore(&other.snapshot()).unwrap();
        assert_ne!(t.snapshot(), snap);
        t.restore(&snap).unwrap();
        assert_eq!(t.snapshot(), snap);
    }
    #[test]
    fn bandit_learns_the_paying_arm() {
        for arms in [2, 30] {
            let mut env = BanditEnv { n_arms: arms, good_arm: 1 };
            let cfg = LearnerConfig {
                episodes: 40,
                train_every: 1,
                ..LearnerConfig::marl()
            };
            let mut t = Trainer::new(cfg, &env);
            t.train(&mut env).unwrap();
            let p = t.policy_probs(0, &[1.0])[1];
            assert!(p > 0.9, "{arms} arms: p(good) = {p}");
        }
    }

    #[test]
    fn constant_reward_keeps_the_policy_near_uniform() {
        let mut env = ConstantReward {
            inner: BanditEnv { n_arms: 30, good_arm: 1 },
            value: 1.0,
        };
        let mut t = Trainer::new(LearnerConfig::marl(), &env);
        t.train(&mut env).unwrap();
        let p = t.policy_probs(0, &[1.0]);
        let h = normalized_entropy(ndarray::ArrayView1::from(&p));
        assert!(h > 0.9, "normalized entropy {h}");
    }

    #[test]
    fn coordination_game_reaches_the_optimum() {
        let mut scores = Vec::new();
        for cfg in [LearnerConfig::marl(), LearnerConfig::sarl()] {
            let mut env = CoordinationEnv;
            let mut t = Trainer::new(LearnerConfig { episodes: 200, ..cfg }, &env);
            t.train(&mut env).unwrap();
            scores.push(t.evaluate_greedy(&mut env, 0, 50).unwrap());
        }
        assert_eq!(scores[0], CoordinationEnv::optimum());
        assert!(scores[0] >= scores[1]);
    }

    #[test]
    fn exported_cases_are_feasible() {
        let sim = SimConfig::with_shape(3, 2);
        let mut env = VecEnv::new(sim.clone()).unwrap();
        let cfg = LearnerConfig {
            episodes: 4,
            episode_len: 10,
            warmup: 16,
            batch_size: 16,
            hidden: [16, 16, 16],
            ..LearnerConfig::marl().with_sim(&sim)
        };
        let mut t = Trainer::new(cfg, &env);
        t.train(&mut env).unwrap();
        let cases = t.export_cases(&mut env, 25).unwrap();
        assert_eq!(cases.len(), 25);
        for c in cases.iter() {
            c.validate().unwrap();
            let a = c.action_matrix().unwrap();
            assert!(a.offload_omega.iter().all(|w| (0.0..=1.0).contains(w)));
            assert!(a.alloc_alpha.iter().all(|&x| x >= sim.alpha_min - 1e-12));
            for col in a.alloc_alpha.columns() {
                assert!(col.sum() <= 1.0 + 1e-9);
            }
            assert!(a.alpha_sum() <= 1.0 + 1e-9);
        }
    }
}
